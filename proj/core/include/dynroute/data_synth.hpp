#ifndef DYNROUTE_DATA_SYNTH_HPP_
#define DYNROUTE_DATA_SYNTH_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dynroute/scale_budget.hpp"
#include "dynroute/tensor.hpp"

namespace dynroute {

// Interval-occupancy pattern and its sampling weight.
struct ScalePattern {
  ScaleEncoding pattern;
  double weight = 0;
};

struct SynthConfig {
  int image_size = 64;
  int num_images = 512;
  int num_classes = 2;  // 0 = rectangle, 1 = disc
  int channels = 1;
  ScaleIntervals intervals = ScaleIntervals::desk_default();
  std::vector<ScalePattern> scale_mix = default_scale_mix();
  double noise = 0.04;
  int max_objects_per_interval = 2;
  std::uint64_t seed = 1234;

  // Four single-interval patterns, three pairs, one triple and the full set.
  static std::vector<ScalePattern> default_scale_mix();

  // ConfigError for malformed patterns, weights not summing to 1, or a
  // pattern occupying an interval that no object can realize at image_size.
  void validate() const;
};

// 8-bit grayscale image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct Corpus {
  std::vector<GrayImage> images;
  std::vector<Annotation> annotations;
  // The pattern drawn for each image.
  std::vector<ScaleEncoding> patterns;
};

Corpus generate_corpus(const SynthConfig& config);

// Writes images/img_NNNNN.pgm and annotations.jsonl under `dir`.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
// Reads a directory produced by write_corpus; patterns are re-derived from
// the annotations with `intervals`.
Corpus read_corpus(const std::filesystem::path& dir, const ScaleIntervals& intervals);

std::filesystem::path image_path(const std::filesystem::path& dir, std::int64_t image_id);

// Binary (P5) portable graymap, maxval 255.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

// B x channels x H x W tensor with pixel / 255, grayscale replicated across
// channels. `indices` selects the images.
Tensor images_to_tensor(std::span<const GrayImage> images, std::span<const std::size_t> indices,
                        int channels);

}  // namespace dynroute

#endif  // DYNROUTE_DATA_SYNTH_HPP_
