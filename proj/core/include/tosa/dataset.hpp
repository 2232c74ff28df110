#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tosa/model.hpp"
#include "tosa/tensor.hpp"

namespace tosa {

/// In-memory dataset: images with class labels and per-patch regression
/// targets. Pixels are already normalized; the mean/std used are stored
/// alongside so files are self-describing.
struct Dataset {
  std::vector<Tensor> images;         // each [C×H×W]
  std::vector<int> labels;            // class per image
  std::vector<Tensor> dense_targets;  // each [num_patches × 1]
  std::string split;
  double pixel_mean = 0.0;
  double pixel_std = 1.0;

  std::size_t size() const { return images.size(); }
  void validate() const;
};

struct DataConfig {
  std::string source = "quadrant";  // "quadrant" or a .tsds file path
  std::size_t train_size = 192;
  std::size_t test_size = 64;

  bool operator==(const DataConfig&) const = default;
};

/// Procedural quadrant dataset: a textured square is stamped into one of
/// the four image quadrants; the class is the quadrant index and the
/// dense target of each patch is its center's distance to the pattern
/// center, in units of the image side. Generated entirely from the seed.
Dataset make_quadrant_dataset(const ModelConfig& model, std::size_t count, std::uint64_t seed,
                              const std::string& split);

/// A single image with the pattern centered, for selection-mask
/// visualization. Returns the image and the set of patch indices the
/// pattern overlaps.
std::pair<Tensor, std::vector<std::size_t>> centered_pattern_image(const ModelConfig& model,
                                                                   std::uint64_t seed);

/// Train/test pair from a DataConfig: either generated or loaded from a
/// TSDS container (the file's split tags select the members).
std::pair<Dataset, Dataset> load_datasets(const ModelConfig& model, const DataConfig& data,
                                          std::uint64_t seed);

// ---- TSDS container (little-endian, magic "TSDS") ----

void save_dataset(const Dataset& dataset, const ModelConfig& model, const std::string& path);
Dataset load_dataset(const std::string& path, const ModelConfig& expected_model,
                     const std::string& split);

}  // namespace tosa
