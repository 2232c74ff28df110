#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tosa/model.hpp"
#include "tosa/selector.hpp"

namespace tosa {

/// Attended/skipped patch grid of one (layer, head). The class token is
/// not a patch; it is reported in cls_attended and counted toward K.
struct SelectionMask {
  std::size_t layer = 0;   // 1-based, 0 in union masks' head slot
  std::size_t head = 0;
  std::size_t grid_width = 0, grid_height = 0;
  std::vector<std::uint8_t> grid;  // 255 attended, 0 skipped, row-major
  bool cls_attended = false;
  std::size_t attended_count = 0;  // grid cells + class token

  void validate(std::size_t expected_k) const;
};

/// Per-head masks plus one head-union mask per layer (head index ==
/// heads in the union entry). Token 0 is the class token; tokens 1..L-1
/// map row-major onto the patch grid.
std::vector<SelectionMask> masks_from_plans(const ModelConfig& config,
                                            const std::map<std::size_t, SelectionPlan>& plans);

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels);

/// Image-resolution overlay: the input gray-mapped to [0,255] and halved
/// wherever the mask marks the patch skipped.
std::vector<std::uint8_t> blend_mask_over_image(const Tensor& image, const SelectionMask& mask,
                                                std::size_t patch_size);

}  // namespace tosa
