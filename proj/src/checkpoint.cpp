#include "recal/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace recal {

namespace {

constexpr std::uint32_t kVersion = 1;

enum LayerKind : std::uint32_t {
  kLinear = 1,
  kConv2d = 2,
  kBatchNorm = 3,
  kRelu = 4,
  kFlatten = 5,
};

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw FormatError(path + ": truncated checkpoint");
  return v;
}

void put_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.values().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const Model& model, const std::optional<NormStats>& stats,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out.write("RCLM", 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(model.input_shape().size()));
  for (std::size_t d : model.input_shape()) {
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  put_u32(out, static_cast<std::uint32_t>(model.feature_boundary()));
  put_u32(out, static_cast<std::uint32_t>(model.specs().size()));
  for (const auto& spec : model.specs()) {
    if (const auto* lin = std::get_if<LinearSpec>(&spec)) {
      put_u32(out, kLinear);
      put_u32(out, 2);
      put_u32(out, static_cast<std::uint32_t>(lin->in));
      put_u32(out, static_cast<std::uint32_t>(lin->out));
    } else if (const auto* conv = std::get_if<Conv2dSpec>(&spec)) {
      put_u32(out, kConv2d);
      put_u32(out, 5);
      put_u32(out, static_cast<std::uint32_t>(conv->in_ch));
      put_u32(out, static_cast<std::uint32_t>(conv->out_ch));
      put_u32(out, static_cast<std::uint32_t>(conv->kernel));
      put_u32(out, static_cast<std::uint32_t>(conv->stride));
      put_u32(out, static_cast<std::uint32_t>(conv->pad));
    } else if (const auto* bn = std::get_if<BatchNormSpec>(&spec)) {
      put_u32(out, kBatchNorm);
      put_u32(out, 1);
      put_u32(out, static_cast<std::uint32_t>(bn->features));
    } else if (std::holds_alternative<ReluSpec>(spec)) {
      put_u32(out, kRelu);
      put_u32(out, 0);
    } else {
      put_u32(out, kFlatten);
      put_u32(out, 0);
    }
  }

  auto tensors = model.named_state();
  std::uint32_t count = static_cast<std::uint32_t>(tensors.size());
  if (stats) count += 2;
  put_u32(out, count);
  for (const auto& entry : tensors) put_tensor(out, entry.name, entry.tensor);
  if (stats) {
    put_tensor(out, "norm.mu",
               Tensor::from_values({stats->mu.size()}, stats->mu));
    put_tensor(out, "norm.sigma",
               Tensor::from_values({stats->sigma.size()}, stats->sigma));
  }
  if (!out) throw FormatError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "RCLM", 4) != 0) {
    throw FormatError(path + ": bad checkpoint magic");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != kVersion) {
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(version));
  }
  const std::uint32_t input_ndim = get_u32(in, path);
  if (input_ndim > 8) throw FormatError(path + ": implausible input rank");
  Shape input_shape(input_ndim);
  for (auto& d : input_shape) d = get_u32(in, path);
  const std::uint32_t boundary = get_u32(in, path);
  const std::uint32_t layer_count = get_u32(in, path);
  if (layer_count > 1024) throw FormatError(path + ": implausible layer count");

  std::vector<LayerSpec> specs;
  specs.reserve(layer_count);
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    const std::uint32_t kind = get_u32(in, path);
    const std::uint32_t nparams = get_u32(in, path);
    std::vector<std::uint32_t> params(nparams);
    for (auto& p : params) p = get_u32(in, path);
    switch (kind) {
      case kLinear:
        if (nparams != 2) throw FormatError(path + ": bad linear spec");
        specs.push_back(LinearSpec{params[0], params[1]});
        break;
      case kConv2d:
        if (nparams != 5) throw FormatError(path + ": bad conv spec");
        specs.push_back(
            Conv2dSpec{params[0], params[1], params[2], params[3], params[4]});
        break;
      case kBatchNorm:
        if (nparams != 1) throw FormatError(path + ": bad batchnorm spec");
        specs.push_back(BatchNormSpec{params[0]});
        break;
      case kRelu:
        specs.push_back(ReluSpec{});
        break;
      case kFlatten:
        specs.push_back(FlattenSpec{});
        break;
      default:
        throw FormatError(path + ": unknown layer kind " + std::to_string(kind));
    }
  }

  Checkpoint checkpoint{Model(std::move(specs), boundary, std::move(input_shape), 0),
                        std::nullopt};

  std::map<std::string, Tensor> slots;
  for (auto& entry : checkpoint.model.named_state()) {
    slots.emplace(entry.name, entry.tensor);
  }

  const std::uint32_t tensor_count = get_u32(in, path);
  std::size_t assigned = 0;
  std::vector<double> mu, sigma;
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    const std::uint32_t name_len = get_u32(in, path);
    if (name_len > 4096) throw FormatError(path + ": implausible tensor name");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t ndim = get_u32(in, path);
    if (ndim > 8) throw FormatError(path + ": implausible tensor rank");
    Shape shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = get_u32(in, path);
      numel *= d;
    }
    std::vector<double> values(numel);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!in) throw FormatError(path + ": truncated tensor payload");

    if (name == "norm.mu") {
      mu = std::move(values);
      continue;
    }
    if (name == "norm.sigma") {
      sigma = std::move(values);
      continue;
    }
    auto slot = slots.find(name);
    if (slot == slots.end()) {
      throw FormatError(path + ": tensor '" + name +
                        "' does not belong to the model");
    }
    if (slot->second.shape() != shape) {
      throw FormatError(path + ": tensor '" + name + "' has shape " +
                        shape_str(shape) + ", model expects " +
                        shape_str(slot->second.shape()));
    }
    slot->second.mutable_values() = std::move(values);
    ++assigned;
  }
  if (assigned != slots.size()) {
    throw FormatError(path + ": checkpoint is missing " +
                      std::to_string(slots.size() - assigned) +
                      " model tensors");
  }
  if (!mu.empty() || !sigma.empty()) {
    if (mu.size() != sigma.size() || mu.empty()) {
      throw FormatError(path + ": inconsistent normalization statistics");
    }
    checkpoint.stats = NormStats{std::move(mu), std::move(sigma)};
  }
  return checkpoint;
}

}  // namespace recal
