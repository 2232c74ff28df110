#include "tosa/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "tosa/rng.hpp"
#include "tosa/threading.hpp"

namespace tosa {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct PatternSample {
  Tensor image;
  int label = 0;
  Tensor dense;
  std::vector<std::size_t> pattern_patches;
};

/// Stamps a checkerboard square into the image at (top, left) and fills
/// the background with Gaussian noise. Dense targets are the
/// patch-center distances to the pattern center in image-side units.
PatternSample render_pattern(const ModelConfig& model, Rng& rng, int quadrant, std::size_t top,
                             std::size_t left) {
  const std::size_t s = model.image_size;
  const std::size_t pat = s / 4;
  PatternSample out;
  out.label = quadrant;
  out.image = Tensor::zeros({model.channels, s, s});

  double* img = out.image.data();
  const std::size_t hw = s * s;
  for (std::size_t i = 0; i < out.image.size(); ++i) img[i] = rng.normal(0.0, 0.15);
  for (std::size_t c = 0; c < model.channels; ++c) {
    for (std::size_t y = 0; y < pat; ++y) {
      for (std::size_t x = 0; x < pat; ++x) {
        const double cell = (((y / 2) + (x / 2)) % 2 == 0) ? 1.0 : -1.0;
        img[c * hw + (top + y) * s + (left + x)] = cell + rng.normal(0.0, 0.05);
      }
    }
  }

  const double cy = (static_cast<double>(top) + static_cast<double>(pat) / 2.0);
  const double cx = (static_cast<double>(left) + static_cast<double>(pat) / 2.0);
  const std::size_t side = model.patches_per_side();
  const std::size_t p = model.patch_size;
  out.dense = Tensor::zeros({model.num_patches(), 1});
  for (std::size_t py = 0; py < side; ++py) {
    for (std::size_t px = 0; px < side; ++px) {
      const double pcy = static_cast<double>(py * p) + static_cast<double>(p) / 2.0;
      const double pcx = static_cast<double>(px * p) + static_cast<double>(p) / 2.0;
      const double dist = std::hypot(pcy - cy, pcx - cx) / static_cast<double>(s);
      out.dense.data()[py * side + px] = dist;

      // patch overlaps the pattern square?
      const bool overlap_y = py * p < top + pat && (py + 1) * p > top;
      const bool overlap_x = px * p < left + pat && (px + 1) * p > left;
      if (overlap_y && overlap_x) out.pattern_patches.push_back(py * side + px);
    }
  }
  return out;
}

PatternSample random_sample(const ModelConfig& model, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t s = model.image_size;
  const std::size_t pat = s / 4;
  const std::size_t half = s / 2;
  const int quadrant = static_cast<int>(rng.index(4));
  const std::size_t max_off = half - pat;
  const std::size_t top = (quadrant / 2) * half + rng.index(max_off + 1);
  const std::size_t left = (quadrant % 2) * half + rng.index(max_off + 1);
  return render_pattern(model, rng, quadrant, top, left);
}

}  // namespace

void Dataset::validate() const {
  if (labels.size() != images.size()) {
    throw std::invalid_argument("dataset: label count != image count");
  }
  if (!dense_targets.empty() && dense_targets.size() != images.size()) {
    throw std::invalid_argument("dataset: dense target count != image count");
  }
  if (pixel_std <= 0.0) throw std::invalid_argument("dataset: pixel_std must be positive");
}

Dataset make_quadrant_dataset(const ModelConfig& model, std::size_t count, std::uint64_t seed,
                              const std::string& split) {
  model.validate();
  if (model.image_size % 4 != 0 || model.image_size < 8) {
    throw std::invalid_argument("quadrant dataset needs an image size divisible by 4 and >= 8");
  }
  Dataset d;
  d.split = split;
  d.images.resize(count);
  d.labels.resize(count);
  d.dense_targets.resize(count);
  const std::uint64_t split_salt = mix64(std::hash<std::string>{}(split));
  parallel_for(count, [&](std::size_t i) {
    PatternSample s = random_sample(model, mix64(seed ^ split_salt ^ mix64(i)));
    d.images[i] = std::move(s.image);
    d.labels[i] = s.label;
    d.dense_targets[i] = std::move(s.dense);
  });
  d.validate();
  return d;
}

std::pair<Tensor, std::vector<std::size_t>> centered_pattern_image(const ModelConfig& model,
                                                                   std::uint64_t seed) {
  Rng rng(mix64(seed));
  const std::size_t s = model.image_size;
  const std::size_t pat = s / 4;
  const std::size_t top = (s - pat) / 2;
  PatternSample sample = render_pattern(model, rng, 0, top, top);
  return {sample.image, sample.pattern_patches};
}

// ---- TSDS container ----
// magic "TSDS", u32 version = 1, u32 count, u32 channels, u32 height,
// u32 width, u32 num_patches, u8 has_dense, f64 mean, f64 std,
// u32 split length + bytes, then per image the raw f64 pixels, then
// i32 labels, then per image the raw f64 dense targets.

namespace {
constexpr char kDatasetMagic[4] = {'T', 'S', 'D', 'S'};

void put_u32(std::ofstream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
               static_cast<char>(v >> 24)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw std::runtime_error("dataset: '" + path + "' is truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(bits >> (8 * i));
  out.write(b, 8);
}

double get_f64(std::ifstream& in, const std::string& path) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8) throw std::runtime_error("dataset: '" + path + "' is truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}
}  // namespace

void save_dataset(const Dataset& dataset, const ModelConfig& model, const std::string& path) {
  dataset.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dataset: cannot open '" + path + "' for writing");
  out.write(kDatasetMagic, 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(dataset.size()));
  put_u32(out, static_cast<std::uint32_t>(model.channels));
  put_u32(out, static_cast<std::uint32_t>(model.image_size));
  put_u32(out, static_cast<std::uint32_t>(model.image_size));
  put_u32(out, static_cast<std::uint32_t>(model.num_patches()));
  out.put(dataset.dense_targets.empty() ? 0 : 1);
  put_f64(out, dataset.pixel_mean);
  put_f64(out, dataset.pixel_std);
  put_u32(out, static_cast<std::uint32_t>(dataset.split.size()));
  out.write(dataset.split.data(), static_cast<std::streamsize>(dataset.split.size()));
  for (const Tensor& img : dataset.images) {
    for (std::size_t i = 0; i < img.size(); ++i) put_f64(out, img.data()[i]);
  }
  for (int label : dataset.labels) put_u32(out, static_cast<std::uint32_t>(label));
  for (const Tensor& t : dataset.dense_targets) {
    for (std::size_t i = 0; i < t.size(); ++i) put_f64(out, t.data()[i]);
  }
  out.flush();
  if (!out) throw std::runtime_error("dataset: write to '" + path + "' failed");
}

Dataset load_dataset(const std::string& path, const ModelConfig& expected_model,
                     const std::string& split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw std::runtime_error("dataset: '" + path + "' has wrong magic bytes");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != 1) throw std::runtime_error("dataset: unsupported version");
  const std::uint32_t count = get_u32(in, path);
  const std::uint32_t channels = get_u32(in, path);
  const std::uint32_t height = get_u32(in, path);
  const std::uint32_t width = get_u32(in, path);
  const std::uint32_t num_patches = get_u32(in, path);
  const int has_dense = in.get();
  if (has_dense < 0) throw std::runtime_error("dataset: '" + path + "' is truncated");

  if (channels != expected_model.channels || height != expected_model.image_size ||
      width != expected_model.image_size || num_patches != expected_model.num_patches()) {
    throw std::runtime_error("dataset: '" + path + "' dims do not match the model config");
  }

  Dataset d;
  d.pixel_mean = get_f64(in, path);
  d.pixel_std = get_f64(in, path);
  const std::uint32_t split_len = get_u32(in, path);
  d.split.resize(split_len);
  in.read(d.split.data(), split_len);
  if (static_cast<std::uint32_t>(in.gcount()) != split_len) {
    throw std::runtime_error("dataset: '" + path + "' is truncated");
  }
  if (!split.empty() && d.split != split) {
    throw std::runtime_error("dataset: '" + path + "' holds split '" + d.split + "', expected '" +
                             split + "'");
  }

  const std::size_t pixels = static_cast<std::size_t>(channels) * height * width;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor img = Tensor::zeros({channels, height, width});
    for (std::size_t k = 0; k < pixels; ++k) img.data()[k] = get_f64(in, path);
    d.images.push_back(std::move(img));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    d.labels.push_back(static_cast<int>(get_u32(in, path)));
  }
  if (has_dense) {
    for (std::uint32_t i = 0; i < count; ++i) {
      Tensor t = Tensor::zeros({num_patches, 1});
      for (std::size_t k = 0; k < num_patches; ++k) t.data()[k] = get_f64(in, path);
      d.dense_targets.push_back(std::move(t));
    }
  }
  d.validate();
  return d;
}

std::pair<Dataset, Dataset> load_datasets(const ModelConfig& model, const DataConfig& data,
                                          std::uint64_t seed) {
  if (data.source == "quadrant") {
    return {make_quadrant_dataset(model, data.train_size, seed, "train"),
            make_quadrant_dataset(model, data.test_size, seed, "test")};
  }
  return {load_dataset(data.source + ".train.tsds", model, "train"),
          load_dataset(data.source + ".test.tsds", model, "test")};
}

}  // namespace tosa
