#include "recal/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>

static_assert(std::endian::native == std::endian::little,
              "RCLT/RCLM serialization assumes a little-endian host");

namespace recal {

// ---------------------------------------------------------------------------
// Dataset

const Shape& Dataset::sample_shape() const {
  if (samples.empty()) throw ContractError("dataset is empty");
  return samples.front().shape();
}

void Dataset::validate() const {
  if (samples.empty()) throw ContractError("dataset is empty");
  const Shape& shape = samples.front().shape();
  for (const auto& sample : samples) {
    if (sample.shape() != shape) {
      throw ShapeError("dataset samples disagree on shape: " +
                       shape_str(shape) + " vs " + shape_str(sample.shape()));
    }
  }
  if (labels && labels->size() != samples.size()) {
    throw ContractError("dataset has " + std::to_string(samples.size()) +
                        " samples but " + std::to_string(labels->size()) +
                        " labels");
  }
}

Tensor Dataset::stack(const std::vector<std::size_t>& indices) const {
  validate();
  if (indices.empty()) throw ContractError("cannot stack an empty batch");
  const Shape& shape = sample_shape();
  const std::size_t per = shape_numel(shape);
  std::vector<double> values;
  values.reserve(indices.size() * per);
  for (std::size_t index : indices) {
    const auto& v = samples.at(index).values();
    values.insert(values.end(), v.begin(), v.end());
  }
  Shape batched{indices.size()};
  batched.insert(batched.end(), shape.begin(), shape.end());
  return Tensor::from_values(std::move(batched), std::move(values));
}

Tensor Dataset::stack_all() const {
  std::vector<std::size_t> indices(size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  return stack(indices);
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

NormStats compute_stats(const Dataset& input, bool per_channel) {
  const std::size_t channels =
      per_channel ? input.sample_shape().empty() ? 1 : input.sample_shape()[0]
                  : 1;
  const std::size_t per_sample = shape_numel(input.sample_shape());
  const std::size_t per_channel_n = per_sample / channels;

  NormStats stats;
  stats.mu.assign(channels, 0.0);
  stats.sigma.assign(channels, 0.0);
  std::vector<double> count(channels, 0.0);
  for (const auto& sample : input.samples) {
    const auto& v = sample.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::size_t c = per_channel ? i / per_channel_n : 0;
      stats.mu[c] += v[i];
      count[c] += 1.0;
    }
  }
  for (std::size_t c = 0; c < channels; ++c) stats.mu[c] /= count[c];
  for (const auto& sample : input.samples) {
    const auto& v = sample.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::size_t c = per_channel ? i / per_channel_n : 0;
      const double d = v[i] - stats.mu[c];
      stats.sigma[c] += d * d;
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    stats.sigma[c] = std::sqrt(stats.sigma[c] / count[c]);
    if (stats.sigma[c] == 0.0) {
      throw DomainError("normalize_dataset: zero variance" +
                        std::string(per_channel ? " in channel " +
                                                      std::to_string(c)
                                                : "") +
                        " (constant data)");
    }
  }
  return stats;
}

}  // namespace

Dataset normalize_with_stats(const Dataset& input, const NormStats& stats) {
  input.validate();
  const std::size_t channels = stats.mu.size();
  const std::size_t per_sample = shape_numel(input.sample_shape());
  if (channels > 1 && (input.sample_shape().empty() ||
                       input.sample_shape()[0] != channels)) {
    throw ShapeError("per-channel stats expect " + std::to_string(channels) +
                     " leading channels, sample shape is " +
                     shape_str(input.sample_shape()));
  }
  const std::size_t per_channel_n = per_sample / channels;

  Dataset output;
  output.labels = input.labels;
  output.stats = stats;
  output.samples.reserve(input.size());
  for (const auto& sample : input.samples) {
    std::vector<double> v = sample.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::size_t c = channels > 1 ? i / per_channel_n : 0;
      v[i] = (v[i] - stats.mu[c]) / stats.sigma[c];
    }
    output.samples.push_back(
        Tensor::from_values(sample.shape(), std::move(v)));
  }
  return output;
}

Dataset normalize_dataset(const Dataset& input, bool per_channel) {
  input.validate();
  return normalize_with_stats(input, compute_stats(input, per_channel));
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_u32_be(std::istream& in, std::size_t& offset,
                          const std::string& path) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) {
    throw FormatError(path + ": truncated at byte offset " +
                      std::to_string(offset));
  }
  offset += 4;
  return (std::uint32_t(bytes[0]) << 24) | (std::uint32_t(bytes[1]) << 16) |
         (std::uint32_t(bytes[2]) << 8) | std::uint32_t(bytes[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::optional<std::string>& labels_path) {
  std::ifstream in(images_path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + images_path);
  std::size_t offset = 0;
  const std::uint32_t magic = read_u32_be(in, offset, images_path);
  if (magic != 0x00000803) {
    throw FormatError(images_path + ": bad image magic at byte offset 0");
  }
  const std::uint32_t count = read_u32_be(in, offset, images_path);
  const std::uint32_t rows = read_u32_be(in, offset, images_path);
  const std::uint32_t cols = read_u32_be(in, offset, images_path);
  if (count == 0 || rows == 0 || cols == 0) {
    throw FormatError(images_path + ": empty image dimensions in header");
  }

  Dataset dataset;
  dataset.samples.reserve(count);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
    if (!in) {
      throw FormatError(images_path + ": truncated at byte offset " +
                        std::to_string(offset));
    }
    offset += pixels.size();
    std::vector<double> values(pixels.size());
    for (std::size_t p = 0; p < pixels.size(); ++p) {
      values[p] = static_cast<double>(pixels[p]) / 255.0;
    }
    dataset.samples.push_back(
        Tensor::from_values({1, rows, cols}, std::move(values)));
  }

  if (labels_path) {
    std::ifstream lin(*labels_path, std::ios::binary);
    if (!lin) throw FormatError("cannot open " + *labels_path);
    std::size_t loffset = 0;
    if (read_u32_be(lin, loffset, *labels_path) != 0x00000801) {
      throw FormatError(*labels_path + ": bad label magic at byte offset 0");
    }
    const std::uint32_t label_count = read_u32_be(lin, loffset, *labels_path);
    if (label_count != count) {
      throw FormatError(*labels_path + ": " + std::to_string(label_count) +
                        " labels for " + std::to_string(count) + " images");
    }
    std::vector<int> labels(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      unsigned char byte = 0;
      lin.read(reinterpret_cast<char*>(&byte), 1);
      if (!lin) {
        throw FormatError(*labels_path + ": truncated at byte offset " +
                          std::to_string(loffset));
      }
      ++loffset;
      labels[i] = byte;
    }
    dataset.labels = std::move(labels);
  }
  return dataset;
}

// ---------------------------------------------------------------------------
// RCLT

namespace {

constexpr std::uint32_t kRcltVersion = 1;
constexpr std::size_t kMaxElements = 1u << 30;

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path,
                       std::size_t& offset) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) {
    throw FormatError(path + ": truncated at byte offset " +
                      std::to_string(offset));
  }
  offset += 4;
  return v;
}

void write_rclt(const Tensor& tensor, const std::optional<std::vector<int>>& labels,
                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out.write("RCLT", 4);
  write_u32(out, kRcltVersion);
  write_u32(out, static_cast<std::uint32_t>(tensor.ndim()));
  for (std::size_t d : tensor.shape()) {
    write_u32(out, static_cast<std::uint32_t>(d));
  }
  out.write(reinterpret_cast<const char*>(tensor.values().data()),
            static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  if (labels) {
    out.write("LBLS", 4);
    write_u32(out, static_cast<std::uint32_t>(labels->size()));
    out.write(reinterpret_cast<const char*>(labels->data()),
              static_cast<std::streamsize>(labels->size() * sizeof(int)));
  }
  if (!out) throw FormatError("write failed for " + path);
}

struct RcltContent {
  Tensor tensor;
  std::optional<std::vector<int>> labels;
};

RcltContent read_rclt(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::size_t offset = 0;
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "RCLT", 4) != 0) {
    throw FormatError(path + ": bad magic at byte offset 0");
  }
  offset += 4;
  const std::uint32_t version = read_u32(in, path, offset);
  if (version != kRcltVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t ndim = read_u32(in, path, offset);
  if (ndim == 0 || ndim > 8) {
    throw FormatError(path + ": implausible rank " + std::to_string(ndim));
  }
  Shape shape(ndim);
  std::size_t numel = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    shape[i] = read_u32(in, path, offset);
    if (shape[i] == 0 || numel > kMaxElements / shape[i]) {
      throw FormatError(path + ": corrupt dims (product overflows sane bounds)");
    }
    numel *= shape[i];
  }
  std::vector<double> values(numel);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(numel * sizeof(double)));
  if (!in) {
    throw FormatError(path + ": truncated payload at byte offset " +
                      std::to_string(offset));
  }
  offset += numel * sizeof(double);

  RcltContent content{Tensor::from_values(std::move(shape), std::move(values)),
                      std::nullopt};
  char block[4];
  in.read(block, 4);
  if (in) {
    if (std::memcmp(block, "LBLS", 4) != 0) {
      throw FormatError(path + ": unexpected trailing block at byte offset " +
                        std::to_string(offset));
    }
    offset += 4;
    const std::uint32_t count = read_u32(in, path, offset);
    std::vector<int> labels(count);
    in.read(reinterpret_cast<char*>(labels.data()),
            static_cast<std::streamsize>(count * sizeof(int)));
    if (!in) {
      throw FormatError(path + ": truncated label block at byte offset " +
                        std::to_string(offset));
    }
    content.labels = std::move(labels);
  }
  return content;
}

}  // namespace

void save_raw_tensor(const Dataset& dataset, const std::string& path) {
  dataset.validate();
  write_rclt(dataset.stack_all(), dataset.labels, path);
}

Dataset load_raw_tensor(const std::string& path) {
  RcltContent content = read_rclt(path);
  if (content.tensor.ndim() < 2) {
    throw FormatError(path + ": dataset container needs at least 2 dims "
                      "(got rank " + std::to_string(content.tensor.ndim()) + ")");
  }
  const Shape& full = content.tensor.shape();
  const std::size_t n = full[0];
  const Shape sample_shape(full.begin() + 1, full.end());
  const std::size_t per = shape_numel(sample_shape);
  const auto& values = content.tensor.values();

  Dataset dataset;
  dataset.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    dataset.samples.push_back(Tensor::from_values(
        sample_shape,
        std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(i * per),
                            values.begin() +
                                static_cast<std::ptrdiff_t>((i + 1) * per))));
  }
  if (content.labels) {
    if (content.labels->size() != n) {
      throw FormatError(path + ": label block size " +
                        std::to_string(content.labels->size()) +
                        " does not match sample count " + std::to_string(n));
    }
    dataset.labels = std::move(content.labels);
  }
  return dataset;
}

void save_rclt_tensor(const Tensor& tensor, const std::string& path) {
  if (!tensor.defined()) throw ContractError("cannot save an undefined tensor");
  write_rclt(tensor, std::nullopt, path);
}

Tensor load_rclt_tensor(const std::string& path) {
  return read_rclt(path).tensor;
}

// ---------------------------------------------------------------------------
// Synthetic blobs

Dataset synth_blobs(std::size_t n_per_cluster, std::size_t k, std::size_t d,
                    double separation, double sigma, std::uint64_t seed) {
  if (k == 0 || d == 0 || n_per_cluster == 0) {
    throw ContractError("synth_blobs needs positive k, d and samples per "
                        "cluster");
  }
  if (!(separation > 0.0) || !(sigma > 0.0)) {
    throw ContractError("synth_blobs needs positive separation and sigma");
  }
  // Grid side length: smallest g with g^d >= k.
  std::size_t side = 1;
  while (true) {
    std::size_t capacity = 1;
    bool enough = false;
    for (std::size_t i = 0; i < d; ++i) {
      capacity *= side;
      if (capacity >= k) {
        enough = true;
        break;
      }
    }
    if (enough || capacity >= k) break;
    ++side;
  }
  std::vector<std::vector<double>> centers(k, std::vector<double>(d, 0.0));
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t rest = c;
    for (std::size_t j = 0; j < d; ++j) {
      centers[c][j] = separation * static_cast<double>(rest % side);
      rest /= side;
    }
  }

  Rng rng(seed);
  Dataset dataset;
  dataset.samples.reserve(n_per_cluster * k);
  std::vector<int> labels;
  labels.reserve(n_per_cluster * k);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n_per_cluster; ++i) {
      std::vector<double> point(d);
      for (std::size_t j = 0; j < d; ++j) {
        point[j] = centers[c][j] + sigma * rng.normal();
      }
      dataset.samples.push_back(Tensor::from_values({d}, std::move(point)));
      labels.push_back(static_cast<int>(c));
    }
  }
  dataset.labels = std::move(labels);
  return dataset;
}

// ---------------------------------------------------------------------------
// Radiometric preprocessing

Tensor dn_to_toa(const Tensor& dn, const ToaMeta& meta) {
  if (!(meta.esun > 0.0)) {
    throw ConfigError("dn_to_toa: esun must be positive");
  }
  if (!(meta.sun_elevation_deg > 0.0) || meta.sun_elevation_deg > 90.0) {
    throw ConfigError("dn_to_toa: sun elevation must be in (0, 90] degrees");
  }
  if (!(meta.dn_max > 0.0)) {
    throw ConfigError("dn_to_toa: dn_max must be positive");
  }
  constexpr double kPi = 3.14159265358979323846;
  const double gain = (meta.l_max - meta.l_min) / meta.dn_max;
  const double sin_elev = std::sin(meta.sun_elevation_deg * kPi / 180.0);
  const double scale =
      kPi * meta.earth_sun_dist_au * meta.earth_sun_dist_au /
      (meta.esun * sin_elev);

  const auto& x = dn.values();
  std::vector<double> out(x.size());
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0 || x[i] > meta.dn_max) {
      throw DomainError("dn_to_toa: DN value " + std::to_string(x[i]) +
                        " outside [0, " + std::to_string(meta.dn_max) +
                        "] at flat index " + std::to_string(i));
    }
    const double radiance = meta.l_min + x[i] * gain;
    double rho = radiance * scale;
    if (rho < 0.0 || rho > 1.5) {
      rho = std::clamp(rho, 0.0, 1.5);
      ++clamped;
    }
    out[i] = rho;
  }
  if (clamped > 0) {
    std::cerr << "warning: dn_to_toa clamped " << clamped
              << " reflectance values to [0, 1.5]\n";
  }
  return Tensor::from_values(dn.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Patches

std::pair<Dataset, PatchGrid> extract_patches(const Tensor& image,
                                              std::size_t patch,
                                              std::size_t stride) {
  if (image.ndim() != 3) {
    throw ShapeError("extract_patches expects a [C x H x W] raster, got " +
                     shape_str(image.shape()));
  }
  if (patch == 0 || stride == 0) {
    throw ContractError("patch size and stride must be positive");
  }
  const std::size_t channels = image.shape()[0];
  const std::size_t height = image.shape()[1];
  const std::size_t width = image.shape()[2];
  if (patch > height || patch > width) {
    throw ContractError("patch size " + std::to_string(patch) +
                        " exceeds raster " + std::to_string(height) + "x" +
                        std::to_string(width));
  }

  PatchGrid grid;
  grid.height = height;
  grid.width = width;
  grid.patch = patch;
  grid.stride = stride;
  for (std::size_t r = 0; r + patch <= height; r += stride) {
    for (std::size_t c = 0; c + patch <= width; c += stride) {
      grid.origins.emplace_back(r, c);
    }
  }

  const auto& x = image.values();
  Dataset patches;
  patches.samples.reserve(grid.origins.size());
  for (const auto& [r0, c0] : grid.origins) {
    std::vector<double> v(channels * patch * patch);
    std::size_t cursor = 0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t r = 0; r < patch; ++r) {
        const std::size_t base = (ch * height + r0 + r) * width + c0;
        for (std::size_t c = 0; c < patch; ++c) v[cursor++] = x[base + c];
      }
    }
    patches.samples.push_back(
        Tensor::from_values({channels, patch, patch}, std::move(v)));
  }
  return {std::move(patches), std::move(grid)};
}

SegmentationMap assemble_segmentation(const PatchGrid& grid,
                                      const ClusterAssignment& patch_labels) {
  if (patch_labels.size() != grid.origins.size()) {
    throw ContractError("assemble_segmentation: " +
                        std::to_string(patch_labels.size()) + " labels for " +
                        std::to_string(grid.origins.size()) + " patches");
  }
  patch_labels.validate();

  SegmentationMap map;
  map.height = grid.height;
  map.width = grid.width;
  map.k = patch_labels.k;
  const std::size_t pixels = grid.height * grid.width;
  map.labels.assign(pixels, -1);
  map.votes.assign(pixels, 0);

  // Per-pixel vote counts plus the current winner; a later label only takes
  // over on a strictly higher count, so ties keep the earliest winner.
  std::vector<std::uint32_t> counts(pixels * patch_labels.k, 0);
  std::vector<std::uint32_t> winner_count(pixels, 0);
  for (std::size_t p = 0; p < grid.origins.size(); ++p) {
    const auto [r0, c0] = grid.origins[p];
    const auto label = static_cast<std::uint32_t>(patch_labels.labels[p]);
    for (std::size_t r = r0; r < r0 + grid.patch; ++r) {
      for (std::size_t c = c0; c < c0 + grid.patch; ++c) {
        const std::size_t pixel = r * grid.width + c;
        ++map.votes[pixel];
        const std::uint32_t count = ++counts[pixel * patch_labels.k + label];
        if (count > winner_count[pixel]) {
          winner_count[pixel] = count;
          map.labels[pixel] = static_cast<int>(label);
        }
      }
    }
  }
  return map;
}

void write_segmentation_pgm(const SegmentationMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << "P5\n" << map.width << " " << map.height << "\n255\n";
  std::vector<unsigned char> bytes(map.labels.size());
  for (std::size_t i = 0; i < map.labels.size(); ++i) {
    bytes[i] = map.labels[i] < 0
                   ? 0
                   : static_cast<unsigned char>(std::lround(
                         (map.labels[i] + 1) * 255.0 /
                         static_cast<double>(map.k)));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path);
}

void write_segmentation_csv(const SegmentationMap& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  for (std::size_t r = 0; r < map.height; ++r) {
    for (std::size_t c = 0; c < map.width; ++c) {
      if (c) out << ',';
      out << map.labels[r * map.width + c];
    }
    out << '\n';
  }
  if (!out) throw FormatError("write failed for " + path);
}

}  // namespace recal
