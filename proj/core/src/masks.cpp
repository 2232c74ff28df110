#include "tosa/masks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace tosa {

void SelectionMask::validate(std::size_t expected_k) const {
  if (grid.size() != grid_width * grid_height) {
    throw std::logic_error("selection mask: grid size mismatch");
  }
  std::size_t lit = cls_attended ? 1 : 0;
  for (std::uint8_t v : grid) {
    if (v != 0 && v != 255) throw std::logic_error("selection mask: grid values must be 0 or 255");
    if (v == 255) ++lit;
  }
  if (lit != attended_count || attended_count != expected_k) {
    throw std::logic_error("selection mask: attended count != K");
  }
}

std::vector<SelectionMask> masks_from_plans(const ModelConfig& config,
                                            const std::map<std::size_t, SelectionPlan>& plans) {
  const std::size_t side = config.patches_per_side();
  std::vector<SelectionMask> masks;
  for (const auto& [layer, plan] : plans) {
    SelectionMask union_mask;
    union_mask.layer = layer;
    union_mask.head = plan.heads.size();
    union_mask.grid_width = side;
    union_mask.grid_height = side;
    union_mask.grid.assign(side * side, 0);

    for (std::size_t h = 0; h < plan.heads.size(); ++h) {
      SelectionMask m;
      m.layer = layer;
      m.head = h;
      m.grid_width = side;
      m.grid_height = side;
      m.grid.assign(side * side, 0);
      for (std::size_t idx : plan.heads[h].attended) {
        if (idx == 0) {
          m.cls_attended = true;
          union_mask.cls_attended = true;
          continue;
        }
        m.grid[idx - 1] = 255;
        union_mask.grid[idx - 1] = 255;
      }
      m.attended_count = plan.heads[h].attended.size();
      m.validate(plan.top_k);
      masks.push_back(std::move(m));
    }
    union_mask.attended_count =
        static_cast<std::size_t>(std::count(union_mask.grid.begin(), union_mask.grid.end(), 255)) +
        (union_mask.cls_attended ? 1 : 0);
    masks.push_back(std::move(union_mask));
  }
  return masks;
}

void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != width * height) throw std::invalid_argument("write_pgm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open '" + path + "'");
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw std::runtime_error("write_pgm: write to '" + path + "' failed");
}

std::vector<std::uint8_t> blend_mask_over_image(const Tensor& image, const SelectionMask& mask,
                                                std::size_t patch_size) {
  if (image.rank() != 3) throw std::invalid_argument("blend: image must be [C×H×W]");
  const std::size_t h = image.shape()[1], w = image.shape()[2];
  if (h != mask.grid_height * patch_size || w != mask.grid_width * patch_size) {
    throw std::invalid_argument("blend: image size does not match mask grid × patch size");
  }
  const std::size_t hw = h * w;
  const std::size_t channels = image.shape()[0];

  double lo = image.data()[0], hi = image.data()[0];
  for (std::size_t i = 0; i < image.size(); ++i) {
    lo = std::min(lo, image.data()[i]);
    hi = std::max(hi, image.data()[i]);
  }
  const double span = hi > lo ? hi - lo : 1.0;

  std::vector<std::uint8_t> out(hw);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double gray = 0.0;  // channel mean, normalized to [0,1]
      for (std::size_t c = 0; c < channels; ++c) gray += (image.data()[c * hw + y * w + x] - lo) / span;
      gray /= static_cast<double>(channels);
      const bool attended = mask.grid[(y / patch_size) * mask.grid_width + (x / patch_size)] == 255;
      const double value = attended ? gray : 0.5 * gray;
      out[y * w + x] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(value, 0.0, 1.0)));
    }
  }
  return out;
}

}  // namespace tosa
