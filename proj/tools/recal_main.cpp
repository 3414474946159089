// Command-line front end: train / predict / evaluate / kmeans / segment.
//
// Every option can come from a flat key=value config file (--config) with
// command-line flags taking precedence; each run writes the fully resolved
// configuration next to its outputs so it can be replayed verbatim.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "recal/checkpoint.hpp"
#include "recal/data.hpp"
#include "recal/kmeans.hpp"
#include "recal/loss.hpp"
#include "recal/metrics.hpp"
#include "recal/nn.hpp"
#include "recal/text.hpp"
#include "recal/trainer.hpp"

namespace fs = std::filesystem;
using namespace recal;

namespace {

struct RunOptions {
  std::string data;
  std::string labels_path;
  std::string out_dir = "out";
  std::string model_stack;  // empty: pick by sample rank
  std::string checkpoint;
  std::string checkpoint2;
  std::string raster;
  std::string predictions;
  std::string second_labels;
  std::string accum_mode = "exact";
  std::size_t k = 2;
  double lambda = 1.0;
  double lr = 1e-4;
  double momentum = 0.9;
  std::size_t micro_batch = 32;
  std::size_t accum_steps = 1;
  std::size_t max_epochs = 200;
  double convergence_tol = 1e-4;
  std::uint64_t seed = 0;
  std::size_t patch_size = 16;
  std::size_t stride = 8;
  std::size_t restarts = 10;
  std::size_t max_iter = 300;
  bool head_relu = true;
  bool feature_batchnorm = true;
  bool per_channel_norm = false;
};

std::string config_path_sink;  // parsed for completeness; applied before parse

void add_common_options(CLI::App* cmd, RunOptions& opt) {
  cmd->add_option("--config", config_path_sink,
                  "flat key=value configuration file (flags win)")
      ->configurable(false);
  cmd->add_option("--seed", opt.seed, "run seed")->capture_default_str();
  cmd->add_option("--out-dir", opt.out_dir, "output directory")
      ->capture_default_str();
}

// Rewrites argv so `--config file` becomes the file's key=value pairs as
// `--key=value` tokens inserted right after the subcommand. Explicit flags
// come later and win via the TakeLast option policy. Unknown keys surface
// as ordinary unexpected-argument parse errors.
std::vector<std::string> expand_config_args(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      break;
    }
  }
  if (path.empty() || args.size() < 2 || args[1].empty() || args[1][0] == '-') {
    return args;
  }

  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::vector<std::string> expanded(args.begin(), args.begin() + 2);
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ": expected key=value, got '" + line + "'");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    const auto vstart = value.find_first_not_of(" \t");
    value = vstart == std::string::npos ? "" : value.substr(vstart);
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (value.empty()) continue;  // empty string means unset
    expanded.push_back("--" + key + "=" + value);
  }
  expanded.insert(expanded.end(), args.begin() + 2, args.end());
  return expanded;
}

void add_train_options(CLI::App* cmd, RunOptions& opt) {
  cmd->add_option("--data", opt.data,
                  "dataset path (.rclt / IDX images) or blobs:... generator");
  cmd->add_option("--labels", opt.labels_path, "IDX label file");
  cmd->add_option("--k", opt.k, "cluster count")->capture_default_str();
  cmd->add_option("--lambda", opt.lambda, "classification entropy weight")
      ->capture_default_str();
  cmd->add_option("--lr", opt.lr, "learning rate")->capture_default_str();
  cmd->add_option("--momentum", opt.momentum, "SGD momentum")
      ->capture_default_str();
  cmd->add_option("--micro-batch", opt.micro_batch, "micro-batch size M")
      ->capture_default_str();
  cmd->add_option("--accum-steps", opt.accum_steps,
                  "micro-batches accumulated per update")
      ->capture_default_str();
  cmd->add_option("--accum-mode", opt.accum_mode, "literal or exact")
      ->capture_default_str();
  cmd->add_option("--epochs", opt.max_epochs, "epoch cap")
      ->capture_default_str();
  cmd->add_option("--tol", opt.convergence_tol, "convergence tolerance")
      ->capture_default_str();
  cmd->add_option("--model", opt.model_stack,
                  "stack spec, e.g. mlp:16,8 or conv:8,16");
  cmd->add_option("--head-relu", opt.head_relu,
                  "keep the ReLU between head batch-norm and softmax")
      ->capture_default_str();
  cmd->add_option("--feature-batchnorm", opt.feature_batchnorm,
                  "batch-normalize feature layers")
      ->capture_default_str();
  cmd->add_option("--per-channel-norm", opt.per_channel_norm,
                  "per-channel intensity normalization")
      ->capture_default_str();
}

// --- dataset plumbing -------------------------------------------------------

std::optional<std::string> sniff_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char bytes[4];
  in.read(bytes, 4);
  if (!in) return std::nullopt;
  return std::string(bytes, 4);
}

Dataset make_blobs(const std::string& spec, std::size_t default_k,
                   std::uint64_t seed) {
  std::size_t n = 200, k = default_k, d = 2;
  double sep = 12.0, sigma = 1.0;
  const auto colon = spec.find(':');
  if (colon != std::string::npos) {
    std::stringstream stream(spec.substr(colon + 1));
    std::string item;
    while (std::getline(stream, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("bad blobs parameter '" + item + "'");
      }
      const std::string key = item.substr(0, eq);
      const std::string value = item.substr(eq + 1);
      try {
        if (key == "n") n = std::stoul(value);
        else if (key == "k") k = std::stoul(value);
        else if (key == "d") d = std::stoul(value);
        else if (key == "sep") sep = std::stod(value);
        else if (key == "sigma") sigma = std::stod(value);
        else throw ConfigError("unknown blobs parameter '" + key + "'");
      } catch (const std::invalid_argument&) {
        throw ConfigError("bad blobs value '" + item + "'");
      }
    }
  }
  return synth_blobs(n, k, d, sep, sigma, seed);
}

Dataset load_dataset(const RunOptions& opt) {
  if (opt.data.empty()) throw ConfigError("--data is required");
  if (opt.data.rfind("blobs", 0) == 0) {
    return make_blobs(opt.data, opt.k, opt.seed);
  }
  const auto magic = sniff_magic(opt.data);
  if (!magic) throw ConfigError("cannot open dataset " + opt.data);
  if (*magic == "RCLT") return load_raw_tensor(opt.data);
  if ((*magic)[0] == 0 && (*magic)[1] == 0 && (*magic)[2] == 8 &&
      (*magic)[3] == 3) {
    return load_idx(opt.data, opt.labels_path.empty()
                                  ? std::nullopt
                                  : std::make_optional(opt.labels_path));
  }
  throw ConfigError("unrecognized dataset format: " + opt.data);
}

std::string default_stack(const Shape& sample_shape) {
  return sample_shape.size() == 3 ? "conv:8,16" : "mlp:16";
}

// --- output plumbing --------------------------------------------------------

void write_resolved_config(CLI::App* cmd, const fs::path& out_dir) {
  std::ofstream out(out_dir / "resolved.cfg");
  out << "# resolved configuration for `recal " << cmd->get_name() << "`\n";
  out << cmd->config_to_str(true, false);
}

void write_labels_csv(const std::vector<int>& labels, const fs::path& path) {
  std::ofstream out(path);
  out << "index,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out << i << ',' << labels[i] << '\n';
  }
}

std::vector<int> read_labels_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open labels file " + path);
  std::vector<int> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "index,label") continue;
    const auto comma = line.find(',');
    const std::string field = comma == std::string::npos
                                  ? line
                                  : line.substr(comma + 1);
    try {
      labels.push_back(std::stoi(field));
    } catch (const std::exception&) {
      throw FormatError(path + ": bad label line '" + line + "'");
    }
  }
  if (labels.empty()) throw FormatError(path + ": no labels found");
  return labels;
}

void write_metrics(const std::vector<std::pair<std::string, std::string>>& rows,
                   const fs::path& out_dir) {
  std::ofstream txt(out_dir / "metrics.txt");
  std::ofstream csv(out_dir / "metrics.csv");
  csv << "metric,value\n";
  for (const auto& [key, value] : rows) {
    txt << key << " = " << value << '\n';
    csv << key << ',' << value << '\n';
  }
}

void write_jaccard_csv(const std::vector<std::vector<double>>& matrix,
                       const fs::path& path) {
  std::ofstream out(path);
  for (const auto& row : matrix) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ',';
      out << format_double(row[j]);
    }
    out << '\n';
  }
}

ClusterAssignment ground_truth_of(const Dataset& dataset, std::size_t k) {
  if (!dataset.labels) {
    throw ConfigError("dataset has no ground-truth labels");
  }
  int max_label = 0;
  for (int l : *dataset.labels) max_label = std::max(max_label, l);
  const std::size_t truth_k =
      std::max<std::size_t>(k, static_cast<std::size_t>(max_label) + 1);
  return ClusterAssignment{*dataset.labels, truth_k, Provenance::ground_truth};
}

TrainConfig train_config_of(const RunOptions& opt) {
  TrainConfig cfg;
  cfg.k = opt.k;
  cfg.lambda = opt.lambda;
  cfg.lr = opt.lr;
  cfg.momentum = opt.momentum;
  cfg.micro_batch = opt.micro_batch;
  cfg.accum_steps = opt.accum_steps;
  cfg.max_epochs = opt.max_epochs;
  cfg.convergence_tol = opt.convergence_tol;
  cfg.seed = opt.seed;
  cfg.accum_mode = parse_accum_mode(opt.accum_mode);
  cfg.validate();
  return cfg;
}

// --- commands ---------------------------------------------------------------

int cmd_train(CLI::App* cmd, RunOptions& opt) {
  const TrainConfig cfg = train_config_of(opt);
  fs::create_directories(opt.out_dir);
  write_resolved_config(cmd, opt.out_dir);

  Dataset raw = load_dataset(opt);
  Dataset dataset = normalize_dataset(raw, opt.per_channel_norm);
  const std::string stack = opt.model_stack.empty()
                                ? default_stack(dataset.sample_shape())
                                : opt.model_stack;
  Model model = build_model(stack, dataset.sample_shape(), cfg.k,
                            opt.head_relu, opt.feature_batchnorm, cfg.seed);

  TrainResult result = train(model, dataset, cfg);
  write_history_csv(result.history, (fs::path(opt.out_dir) / "history.csv").string());
  save_checkpoint(model, dataset.stats,
                  (fs::path(opt.out_dir) / "model.rclm").string());

  ClusterAssignment predicted = predict_labels(model, dataset);
  write_labels_csv(predicted.labels, fs::path(opt.out_dir) / "labels.csv");

  std::vector<std::pair<std::string, std::string>> rows;
  rows.emplace_back("epochs_run", std::to_string(result.history.size()));
  if (!result.history.empty()) {
    rows.emplace_back("final_loss", format_double(result.history.back().loss));
  }
  const auto histogram = cluster_histogram(predicted);
  std::size_t empty = 0;
  for (std::size_t c = 0; c < histogram.size(); ++c) {
    rows.emplace_back("cluster_" + std::to_string(c),
                      std::to_string(histogram[c]));
    if (histogram[c] == 0) ++empty;
  }
  rows.emplace_back("empty_clusters", std::to_string(empty));
  if (dataset.labels) {
    rows.emplace_back("nmi", format_double(nmi(predicted,
                                               ground_truth_of(dataset, cfg.k))));
  }
  write_metrics(rows, opt.out_dir);
  return 0;
}

int cmd_predict(CLI::App* cmd, RunOptions& opt) {
  if (opt.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  fs::create_directories(opt.out_dir);
  write_resolved_config(cmd, opt.out_dir);

  Checkpoint checkpoint = load_checkpoint(opt.checkpoint);
  Dataset raw = load_dataset(opt);
  Dataset dataset = checkpoint.stats
                        ? normalize_with_stats(raw, *checkpoint.stats)
                        : normalize_dataset(raw, opt.per_channel_norm);
  ClusterAssignment predicted = predict_labels(checkpoint.model, dataset);
  write_labels_csv(predicted.labels, fs::path(opt.out_dir) / "predictions.csv");
  return 0;
}

int cmd_evaluate(CLI::App* cmd, RunOptions& opt) {
  if (opt.checkpoint.empty() && opt.predictions.empty()) {
    throw ConfigError("evaluate needs --checkpoint or --predictions");
  }
  fs::create_directories(opt.out_dir);
  write_resolved_config(cmd, opt.out_dir);

  Dataset raw = load_dataset(opt);
  ClusterAssignment predicted;
  if (!opt.predictions.empty()) {
    std::vector<int> labels = read_labels_csv(opt.predictions);
    if (labels.size() != raw.size()) {
      throw ConfigError("predictions file has " + std::to_string(labels.size()) +
                        " labels for " + std::to_string(raw.size()) + " samples");
    }
    int max_label = 0;
    for (int l : labels) max_label = std::max(max_label, l);
    predicted = ClusterAssignment{
        std::move(labels),
        std::max<std::size_t>(opt.k, static_cast<std::size_t>(max_label) + 1),
        Provenance::predicted};
  } else {
    Checkpoint checkpoint = load_checkpoint(opt.checkpoint);
    Dataset dataset = checkpoint.stats
                          ? normalize_with_stats(raw, *checkpoint.stats)
                          : normalize_dataset(raw, opt.per_channel_norm);
    predicted = predict_labels(checkpoint.model, dataset);
  }

  ClusterAssignment truth = ground_truth_of(raw, predicted.k);
  std::vector<std::pair<std::string, std::string>> rows;
  rows.emplace_back("nmi", format_double(nmi(predicted, truth)));
  rows.emplace_back("samples", std::to_string(predicted.size()));
  const auto histogram = cluster_histogram(predicted);
  std::size_t empty = 0;
  for (std::size_t c = 0; c < histogram.size(); ++c) {
    rows.emplace_back("cluster_" + std::to_string(c),
                      std::to_string(histogram[c]));
    if (histogram[c] == 0) ++empty;
  }
  rows.emplace_back("empty_clusters", std::to_string(empty));
  write_metrics(rows, opt.out_dir);

  if (!opt.second_labels.empty()) {
    std::vector<int> other = read_labels_csv(opt.second_labels);
    if (other.size() != predicted.size()) {
      throw ConfigError("second labeling size mismatch");
    }
    int max_label = 0;
    for (int l : other) max_label = std::max(max_label, l);
    const std::size_t k = std::max(predicted.k,
                                   static_cast<std::size_t>(max_label) + 1);
    ClusterAssignment second{std::move(other), k, Provenance::predicted};
    write_jaccard_csv(cross_model_consensus(predicted, second, k),
                      fs::path(opt.out_dir) / "jaccard.csv");
  }
  return 0;
}

int cmd_kmeans(CLI::App* cmd, RunOptions& opt) {
  fs::create_directories(opt.out_dir);
  write_resolved_config(cmd, opt.out_dir);

  Dataset raw = load_dataset(opt);
  ClusterAssignment truth = ground_truth_of(raw, opt.k);

  std::optional<Checkpoint> checkpoint;
  if (!opt.checkpoint.empty()) checkpoint = load_checkpoint(opt.checkpoint);
  Dataset dataset = checkpoint && checkpoint->stats
                        ? normalize_with_stats(raw, *checkpoint->stats)
                        : normalize_dataset(raw, opt.per_channel_norm);

  // Raw intensities, flattened.
  Tensor points = dataset.stack_all();
  points = reshape(points, {dataset.size(),
                            shape_numel(dataset.sample_shape())});
  KMeansResult raw_result =
      kmeans_fit(points, opt.k, opt.restarts, opt.max_iter, opt.seed);
  write_labels_csv(raw_result.assignment.labels,
                   fs::path(opt.out_dir) / "kmeans_raw_labels.csv");

  std::vector<std::pair<std::string, std::string>> rows;
  rows.emplace_back("nmi_raw", format_double(nmi(raw_result.assignment, truth)));
  rows.emplace_back("inertia_raw", format_double(raw_result.inertia));
  rows.emplace_back("iterations_raw", std::to_string(raw_result.iterations));

  if (checkpoint) {
    Tensor embedded = embed_dataset(checkpoint->model, dataset);
    KMeansResult embedding_result =
        kmeans_fit(embedded, opt.k, opt.restarts, opt.max_iter, opt.seed);
    write_labels_csv(embedding_result.assignment.labels,
                     fs::path(opt.out_dir) / "kmeans_embedding_labels.csv");
    rows.emplace_back("nmi_embedding",
                      format_double(nmi(embedding_result.assignment, truth)));
    rows.emplace_back("inertia_embedding",
                      format_double(embedding_result.inertia));
    rows.emplace_back("iterations_embedding",
                      std::to_string(embedding_result.iterations));
  }
  write_metrics(rows, opt.out_dir);
  return 0;
}

int cmd_segment(CLI::App* cmd, RunOptions& opt) {
  if (opt.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (opt.raster.empty()) throw ConfigError("--raster is required");
  fs::create_directories(opt.out_dir);
  write_resolved_config(cmd, opt.out_dir);

  Tensor raster = load_rclt_tensor(opt.raster);
  if (raster.ndim() == 4 && raster.shape()[0] == 1) {
    raster = reshape(raster, Shape(raster.shape().begin() + 1,
                                   raster.shape().end()));
  }
  if (raster.ndim() != 3) {
    throw ConfigError("raster must be [C x H x W], got " +
                      shape_str(raster.shape()));
  }

  auto segment_with = [&](const std::string& checkpoint_path,
                          const std::string& suffix) {
    Checkpoint checkpoint = load_checkpoint(checkpoint_path);
    auto [patches, grid] = extract_patches(raster, opt.patch_size, opt.stride);
    Dataset normalized;
    if (checkpoint.stats) {
      normalized = normalize_with_stats(patches, *checkpoint.stats);
    } else {
      std::cerr << "warning: checkpoint has no normalization statistics; "
                   "using the raster's own\n";
      normalized = normalize_dataset(patches, opt.per_channel_norm);
    }
    ClusterAssignment labels = predict_labels(checkpoint.model, normalized);
    SegmentationMap map = assemble_segmentation(grid, labels);
    write_segmentation_pgm(map,
                           (fs::path(opt.out_dir) / ("segmentation" + suffix + ".pgm"))
                               .string());
    write_segmentation_csv(map,
                           (fs::path(opt.out_dir) / ("segmentation" + suffix + ".csv"))
                               .string());
    return map;
  };

  SegmentationMap first = segment_with(opt.checkpoint, "");
  if (!opt.checkpoint2.empty()) {
    SegmentationMap second = segment_with(opt.checkpoint2, "2");
    // Cross-model consensus over covered pixels, Tables 4-5 style.
    std::vector<int> la, lb;
    for (std::size_t i = 0; i < first.labels.size(); ++i) {
      if (first.labels[i] >= 0 && second.labels[i] >= 0) {
        la.push_back(first.labels[i]);
        lb.push_back(second.labels[i]);
      }
    }
    const std::size_t k = std::max(first.k, second.k);
    ClusterAssignment a{std::move(la), k, Provenance::predicted};
    ClusterAssignment b{std::move(lb), k, Provenance::predicted};
    write_jaccard_csv(cross_model_consensus(a, b, k),
                      fs::path(opt.out_dir) / "consensus.csv");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RECAL: entropy-driven unsupervised clustering"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  RunOptions opt;

  CLI::App* train_cmd = app.add_subcommand("train", "train a clustering model");
  add_common_options(train_cmd, opt);
  add_train_options(train_cmd, opt);

  CLI::App* predict_cmd =
      app.add_subcommand("predict", "predict cluster labels with a checkpoint");
  add_common_options(predict_cmd, opt);
  predict_cmd->add_option("--checkpoint", opt.checkpoint, "model checkpoint");
  predict_cmd->add_option("--data", opt.data, "dataset path or blobs:...");
  predict_cmd->add_option("--labels", opt.labels_path, "IDX label file");
  predict_cmd->add_option("--k", opt.k, "cluster count")->capture_default_str();

  CLI::App* evaluate_cmd =
      app.add_subcommand("evaluate", "score predictions against ground truth");
  add_common_options(evaluate_cmd, opt);
  evaluate_cmd->add_option("--checkpoint", opt.checkpoint, "model checkpoint");
  evaluate_cmd->add_option("--predictions", opt.predictions,
                           "labels CSV instead of a checkpoint");
  evaluate_cmd->add_option("--second-labels", opt.second_labels,
                           "second labeling for the Jaccard matrix");
  evaluate_cmd->add_option("--data", opt.data, "labeled dataset path");
  evaluate_cmd->add_option("--labels", opt.labels_path, "IDX label file");
  evaluate_cmd->add_option("--k", opt.k, "cluster count")->capture_default_str();

  CLI::App* kmeans_cmd = app.add_subcommand(
      "kmeans", "k-means baseline on raw inputs and learned embeddings");
  add_common_options(kmeans_cmd, opt);
  kmeans_cmd->add_option("--checkpoint", opt.checkpoint,
                         "checkpoint for embedding-space clustering");
  kmeans_cmd->add_option("--data", opt.data, "labeled dataset path");
  kmeans_cmd->add_option("--labels", opt.labels_path, "IDX label file");
  kmeans_cmd->add_option("--k", opt.k, "cluster count")->capture_default_str();
  kmeans_cmd->add_option("--restarts", opt.restarts, "k-means++ restarts")
      ->capture_default_str();
  kmeans_cmd->add_option("--max-iter", opt.max_iter, "Lloyd iteration cap")
      ->capture_default_str();
  kmeans_cmd->add_option("--per-channel-norm", opt.per_channel_norm,
                         "per-channel intensity normalization")
      ->capture_default_str();

  CLI::App* segment_cmd =
      app.add_subcommand("segment", "patch-based raster segmentation");
  add_common_options(segment_cmd, opt);
  segment_cmd->add_option("--checkpoint", opt.checkpoint, "model checkpoint");
  segment_cmd->add_option("--checkpoint2", opt.checkpoint2,
                          "second checkpoint for cross-model consensus");
  segment_cmd->add_option("--raster", opt.raster, "RCLT raster [C x H x W]");
  segment_cmd->add_option("--patch-size", opt.patch_size, "patch size P")
      ->capture_default_str();
  segment_cmd->add_option("--stride", opt.stride, "patch stride S")
      ->capture_default_str();
  segment_cmd->add_option("--per-channel-norm", opt.per_channel_norm,
                          "per-channel intensity normalization")
      ->capture_default_str();

  try {
    std::vector<std::string> args = expand_config_args(argc, argv);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    reversed.pop_back();  // program name
    app.parse(reversed);
  } catch (const CLI::CallForHelp& help) {
    return app.exit(help);
  } catch (const CLI::CallForAllHelp& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& error) {
    std::cerr << "error: " << error.what() << '\n';
    return 2;
  } catch (const Error& error) {
    std::cerr << "error: " << error.what() << '\n';
    return 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_cmd, opt);
    if (predict_cmd->parsed()) return cmd_predict(predict_cmd, opt);
    if (evaluate_cmd->parsed()) return cmd_evaluate(evaluate_cmd, opt);
    if (kmeans_cmd->parsed()) return cmd_kmeans(kmeans_cmd, opt);
    if (segment_cmd->parsed()) return cmd_segment(segment_cmd, opt);
  } catch (const NumericError& error) {
    std::cerr << "numeric failure: " << error.what() << '\n';
    return 3;
  } catch (const Error& error) {
    std::cerr << "error: " << error.what() << '\n';
    return 2;
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << '\n';
    return 2;
  }
  return 0;
}
