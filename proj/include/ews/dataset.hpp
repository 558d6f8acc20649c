#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ews/rng.hpp"
#include "ews/tensor.hpp"

namespace ews {

// In-memory labeled image set, pixels in [0, 1], layout NCHW.
struct Dataset {
  int height = 32;
  int width = 32;
  int channels = 3;
  int num_classes = 10;
  std::vector<float> images;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  std::size_t image_scalars() const {
    return static_cast<std::size_t>(channels) *
           static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  const float* image(int i) const {
    return images.data() + static_cast<std::size_t>(i) * image_scalars();
  }
  float* image(int i) {
    return images.data() + static_cast<std::size_t>(i) * image_scalars();
  }
  // Gathers the given examples into one batch tensor (N, C, H, W).
  Tensor gather(const std::vector<int>& indices) const;
  std::vector<int> gather_labels(const std::vector<int>& indices) const;
  // Content fingerprint over dimensions, pixels and labels.
  std::uint64_t content_hash() const;
};

// Synthetic classification data: each class is a fixed low-frequency color
// pattern (a coarse random grid, bilinearly upsampled), and each example is
// that pattern plus per-pixel Gaussian noise, clipped to [0, 1]. The noise
// level sets the difficulty.
struct SyntheticSpec {
  int n = 1024;
  int classes = 10;
  int hw = 32;
  int channels = 3;
  int grid = 4;          // prototype coarseness
  double noise = 0.6;    // per-pixel noise std
  std::uint64_t seed = 7;
};
Dataset make_synthetic_dataset(const SyntheticSpec& spec);

// Packed binary round trip (exact).
void write_packed_dataset(const Dataset& ds, const std::string& path);
Dataset read_packed_dataset(const std::string& path);

// Ingests a directory whose immediate subdirectories are class names, each
// holding binary PPM (P6) images of one common size. Classes are ordered by
// name; empty classes and ragged sizes are rejected with diagnostics.
Dataset ingest_class_folders(const std::string& dir);

// Deterministic train/validation split of [0, n).
struct SplitIndices {
  std::vector<int> train;
  std::vector<int> val;
};
SplitIndices split_indices(int n, double val_fraction, Rng& rng);

}  // namespace ews
