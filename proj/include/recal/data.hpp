#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "recal/metrics.hpp"
#include "recal/rng.hpp"
#include "recal/tensor.hpp"

namespace recal {

// Normalization statistics; one entry for dataset-global stats, one per
// channel when per-channel normalization is requested.
struct NormStats {
  std::vector<double> mu, sigma;
  bool per_channel() const { return mu.size() > 1; }
};

struct Dataset {
  std::vector<Tensor> samples;  // identical shapes
  std::optional<std::vector<int>> labels;
  std::optional<NormStats> stats;

  std::size_t size() const { return samples.size(); }
  const Shape& sample_shape() const;
  void validate() const;

  // Stacks the selected samples into one [B x sample] batch tensor.
  Tensor stack(const std::vector<std::size_t>& indices) const;
  Tensor stack_all() const;
};

// Shifts and scales intensities to zero mean, unit variance. Statistics are
// dataset-global scalars by default; per_channel computes them over the
// leading sample axis instead. The statistics used are recorded on the
// returned dataset for reuse at inference.
Dataset normalize_dataset(const Dataset& input, bool per_channel = false);
Dataset normalize_with_stats(const Dataset& input, const NormStats& stats);

// Standard big-endian IDX containers (0x803 image file, 0x801 label file).
// Pixels are scaled to [0, 1]; samples come out as [1 x H x W].
Dataset load_idx(const std::string& images_path,
                 const std::optional<std::string>& labels_path = std::nullopt);

// RCLT container: "RCLT", version u32 LE, ndim u32, dims u32 each, float64
// LE row-major payload, optional trailing label block ("LBLS", count u32,
// i32 labels). Datasets store [N x sample dims...]; rasters store the bare
// tensor. Round-trips are bit-exact.
Dataset load_raw_tensor(const std::string& path);
void save_raw_tensor(const Dataset& dataset, const std::string& path);
Tensor load_rclt_tensor(const std::string& path);
void save_rclt_tensor(const Tensor& tensor, const std::string& path);

// K isotropic Gaussian clusters, labeled; cluster centers sit on an
// axis-aligned grid with spacing `separation` (adjacent centers exactly
// `separation` apart).
Dataset synth_blobs(std::size_t n_per_cluster, std::size_t k, std::size_t d,
                    double separation, double sigma, std::uint64_t seed);

struct ToaMeta {
  double dn_max = 1023.0;  // 10-bit quantisation default
  double l_min = 0.0;
  double l_max = 1.0;
  double esun = 1.0;
  double sun_elevation_deg = 90.0;
  double earth_sun_dist_au = 1.0;
};

// DN -> radiance (linear in the instrument's dynamic range) -> top-of-
// atmosphere reflectance, clamped to [0, 1.5] with a warning when any value
// falls outside.
Tensor dn_to_toa(const Tensor& dn, const ToaMeta& meta);

struct PatchGrid {
  std::size_t height = 0, width = 0;
  std::size_t patch = 0, stride = 0;
  std::vector<std::pair<std::size_t, std::size_t>> origins;  // row-major

  std::size_t rows() const { return (height - patch) / stride + 1; }
  std::size_t cols() const { return (width - patch) / stride + 1; }
};

// Splits a [C x H x W] raster into P x P patches at the given stride,
// in PatchGrid origin order.
std::pair<Dataset, PatchGrid> extract_patches(const Tensor& image,
                                              std::size_t patch,
                                              std::size_t stride);

struct SegmentationMap {
  std::size_t height = 0, width = 0, k = 0;
  std::vector<int> labels;           // H*W row-major; -1 where uncovered
  std::vector<std::uint32_t> votes;  // patches covering each pixel
};

// Paints each patch's label on its footprint. Overlaps are resolved by
// majority vote; ties keep the label that reached the winning count first.
SegmentationMap assemble_segmentation(const PatchGrid& grid,
                                      const ClusterAssignment& patch_labels);

// P5 PGM with labels mapped to distinct gray levels (uncovered pixels are
// black), plus a CSV of the raw label grid.
void write_segmentation_pgm(const SegmentationMap& map, const std::string& path);
void write_segmentation_csv(const SegmentationMap& map, const std::string& path);

}  // namespace recal
