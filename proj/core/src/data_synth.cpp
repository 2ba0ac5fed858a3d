#include "dynroute/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "dynroute/errors.hpp"

namespace dynroute {
namespace {

constexpr int kMinObjectSize = 3;
constexpr int kSupersample = 4;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Integer max-side range [lo, hi] realizing interval i at this image size.
std::pair<int, int> size_range(const SynthConfig& c, int interval) {
  const auto& up = c.intervals.upper;
  const int lo = interval == 0 ? kMinObjectSize
                               : std::max(kMinObjectSize,
                                          static_cast<int>(std::floor(up[static_cast<std::size_t>(interval - 1)])) + 1);
  int hi = c.image_size;
  if (interval < static_cast<int>(up.size())) {
    hi = std::min(hi, static_cast<int>(std::floor(up[static_cast<std::size_t>(interval)])));
  }
  return {lo, hi};
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double coverage(const Box& b, int px, int py) {
  int hits = 0;
  for (int sy = 0; sy < kSupersample; ++sy) {
    const double y = py + (sy + 0.5) / kSupersample;
    for (int sx = 0; sx < kSupersample; ++sx) {
      const double x = px + (sx + 0.5) / kSupersample;
      bool in;
      if (b.cls == 1) {
        const double dx = (x - (b.x + b.w / 2)) / (b.w / 2);
        const double dy = (y - (b.y + b.h / 2)) / (b.h / 2);
        in = dx * dx + dy * dy <= 1.0;
      } else {
        in = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
      }
      hits += in ? 1 : 0;
    }
  }
  return static_cast<double>(hits) / (kSupersample * kSupersample);
}

}  // namespace

std::vector<ScalePattern> SynthConfig::default_scale_mix() {
  return {
      {{1, 0, 0, 0}, 0.1}, {{0, 1, 0, 0}, 0.1}, {{0, 0, 1, 0}, 0.1}, {{0, 0, 0, 1}, 0.1},
      {{1, 1, 0, 0}, 0.1}, {{0, 0, 1, 1}, 0.1}, {{1, 0, 1, 0}, 0.1}, {{1, 1, 1, 0}, 0.1},
      {{1, 1, 1, 1}, 0.2},
  };
}

void SynthConfig::validate() const {
  intervals.validate();
  if (image_size < 8) throw ConfigError("data: image_size too small");
  if (num_images < 0) throw ConfigError("data: num_images must be >= 0");
  if (num_classes < 1 || num_classes > 2) throw ConfigError("data: num_classes must be 1 or 2");
  if (channels < 1) throw ConfigError("data: channels must be >= 1");
  if (noise < 0) throw ConfigError("data: noise must be >= 0");
  if (max_objects_per_interval < 1) throw ConfigError("data: max_objects_per_interval must be >= 1");
  if (scale_mix.empty()) throw ConfigError("data: scale_mix is empty");
  double total = 0;
  for (const ScalePattern& p : scale_mix) {
    if (static_cast<int>(p.pattern.size()) != intervals.count()) {
      throw ConfigError("data: pattern length " + std::to_string(p.pattern.size()) +
                        " does not match " + std::to_string(intervals.count()) + " intervals");
    }
    if (!(p.weight >= 0)) throw ConfigError("data: negative pattern weight");
    for (std::size_t i = 0; i < p.pattern.size(); ++i) {
      if (p.pattern[i] > 1) throw ConfigError("data: pattern entries must be 0 or 1");
      if (p.pattern[i]) {
        const auto [lo, hi] = size_range(*this, static_cast<int>(i));
        if (lo > hi) {
          throw ConfigError("data: interval " + std::to_string(i) +
                            " cannot be realized in a " + std::to_string(image_size) +
                            "-pixel image");
        }
      }
    }
    total += p.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("data: scale_mix weights must sum to 1");
}

Corpus generate_corpus(const SynthConfig& config) {
  config.validate();
  std::vector<double> weights;
  for (const ScalePattern& p : config.scale_mix) weights.push_back(p.weight);

  Corpus corpus;
  const int n = config.image_size;
  for (int idx = 0; idx < config.num_images; ++idx) {
    std::mt19937_64 rng(splitmix64(config.seed ^ splitmix64(static_cast<std::uint64_t>(idx))));
    std::discrete_distribution<int> pick(weights.begin(), weights.end());
    const ScaleEncoding& pattern = config.scale_mix[static_cast<std::size_t>(pick(rng))].pattern;

    Annotation ann;
    ann.image_id = idx;
    for (std::size_t i = 0; i < pattern.size(); ++i) {
      if (!pattern[i]) continue;
      const auto [lo, hi] = size_range(config, static_cast<int>(i));
      const int count = uniform_int(rng, 1, config.max_objects_per_interval);
      for (int k = 0; k < count; ++k) {
        const int major = uniform_int(rng, lo, hi);
        const int minor = uniform_int(rng, std::max(2, (major + 1) / 2), major);
        const bool wide = uniform_int(rng, 0, 1) == 1;
        Box b;
        b.w = wide ? major : minor;
        b.h = wide ? minor : major;
        b.x = uniform_int(rng, 0, n - static_cast<int>(b.w));
        b.y = uniform_int(rng, 0, n - static_cast<int>(b.h));
        b.cls = uniform_int(rng, 0, config.num_classes - 1);
        ann.boxes.push_back(b);
      }
    }
    // Paint large objects first so small ones stay visible.
    std::vector<Box> order = ann.boxes;
    std::stable_sort(order.begin(), order.end(), [](const Box& a, const Box& b) {
      return std::max(a.w, a.h) > std::max(b.w, b.h);
    });

    std::uniform_real_distribution<double> background(0.0, 0.3);
    std::uniform_real_distribution<double> foreground(0.55, 1.0);
    std::normal_distribution<double> noise(0.0, config.noise);
    std::vector<double> canvas(static_cast<std::size_t>(n * n), background(rng));
    for (const Box& b : order) {
      const double level = foreground(rng);
      const int x0 = static_cast<int>(b.x), y0 = static_cast<int>(b.y);
      const int x1 = std::min(n, static_cast<int>(std::ceil(b.x + b.w)));
      const int y1 = std::min(n, static_cast<int>(std::ceil(b.y + b.h)));
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const double cov = coverage(b, x, y);
          double& px = canvas[static_cast<std::size_t>(y * n + x)];
          px = (1.0 - cov) * px + cov * level;
        }
      }
    }
    GrayImage img;
    img.width = n;
    img.height = n;
    img.pixels.resize(canvas.size());
    for (std::size_t p = 0; p < canvas.size(); ++p) {
      const double v = std::clamp(canvas[p] + (config.noise > 0 ? noise(rng) : 0.0), 0.0, 1.0);
      img.pixels[p] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    corpus.images.push_back(std::move(img));
    corpus.annotations.push_back(std::move(ann));
    corpus.patterns.push_back(pattern);
  }
  return corpus;
}

std::filesystem::path image_path(const std::filesystem::path& dir, std::int64_t image_id) {
  char name[64];
  std::snprintf(name, sizeof name, "img_%05lld.pgm", static_cast<long long>(image_id));
  return dir / "images" / name;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  for (std::size_t i = 0; i < corpus.images.size(); ++i) {
    write_pgm(image_path(dir, corpus.annotations[i].image_id), corpus.images[i]);
  }
  write_annotations(dir / "annotations.jsonl", corpus.annotations);
}

Corpus read_corpus(const std::filesystem::path& dir, const ScaleIntervals& intervals) {
  Corpus corpus;
  corpus.annotations = read_annotations(dir / "annotations.jsonl");
  for (const Annotation& a : corpus.annotations) {
    corpus.images.push_back(read_pgm(image_path(dir, a.image_id)));
    corpus.patterns.push_back(encode_scales(a.boxes, intervals));
  }
  return corpus;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write " + path.string());
  os << "P5\n" << image.width << " " << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()),
           static_cast<std::streamsize>(image.pixels.size()));
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read image " + path.string());
  auto token = [&is, &path]() {
    std::string t;
    while (is >> t) {
      if (t[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return t;
    }
    throw DataError("truncated PGM header in " + path.string());
  };
  if (token() != "P5") throw DataError(path.string() + " is not a binary PGM");
  GrayImage img;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    if (std::stoi(token()) != 255) throw DataError(path.string() + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw DataError("malformed PGM header in " + path.string());
  }
  if (img.width <= 0 || img.height <= 0) throw DataError("bad PGM dimensions in " + path.string());
  is.get();  // single whitespace before the raster
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height));
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size()))) {
    throw DataError("truncated PGM raster in " + path.string());
  }
  return img;
}

Tensor images_to_tensor(std::span<const GrayImage> images, std::span<const std::size_t> indices,
                        int channels) {
  if (indices.empty()) throw UsageError("images_to_tensor: empty selection");
  const GrayImage& first = images[indices.front()];
  Tensor t(Shape{static_cast<int>(indices.size()), channels, first.height, first.width});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const GrayImage& img = images[indices[b]];
    if (img.width != first.width || img.height != first.height) {
      throw DataError("images_to_tensor: mixed image sizes in one batch");
    }
    for (int c = 0; c < channels; ++c) {
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
          t.at(static_cast<int>(b), c, y, x) =
              img.pixels[static_cast<std::size_t>(y * img.width + x)] / 255.0;
        }
      }
    }
  }
  return t;
}

}  // namespace dynroute
