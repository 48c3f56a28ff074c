#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prdlab/tensor.hpp"

namespace prdlab {

inline constexpr std::size_t kFindingCount = 4;
inline constexpr std::size_t kMinImageSide = 16;
inline constexpr double kNoiseAmplitude = 0.1;
inline constexpr double kGlyphIntensity = 0.8;

using Labels = std::array<bool, kFindingCount>;

std::string_view finding_name(std::size_t finding);

// One toy image with its grammar-generated pseudo-report. Pixel values are
// multiples of 1/65535 so they survive a 16-bit PGM round trip exactly.
struct SyntheticPair {
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
  std::size_t side = 0;
  std::vector<double> pixels;  // side * side, row-major
  std::string report;
  Labels labels{};

  Tensor image() const;  // (side, side, 1)
};

// Sample `id` of the corpus generated from `corpus_seed`; independent of
// every other sample.
SyntheticPair generate_pair(std::uint64_t id, std::size_t side, std::uint64_t corpus_seed);

// Samples first_id .. first_id + n - 1.
std::vector<SyntheticPair> generate_corpus(std::size_t n, std::size_t side, std::uint64_t seed,
                                           std::uint64_t first_id = 0);

// Glyph of one finding on an otherwise empty side x side canvas.
std::vector<double> render_glyph(std::size_t finding, std::size_t side);

// Parses a generated report back into labels; throws on clauses outside the
// grammar.
Labels recover_labels(std::string_view report);

// All clauses the grammar can emit for a finding in the given state.
std::span<const std::string_view> clause_options(std::size_t finding, bool positive);

void write_pgm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t side);
std::vector<double> read_pgm(const std::filesystem::path& path, std::size_t& side);

// corpus.jsonl (one {id, report, labels, image_file, seed} per line) plus
// images/<id>.pgm under `dir`.
void save_corpus(const std::filesystem::path& dir, std::span<const SyntheticPair> pairs);
std::vector<SyntheticPair> load_corpus(const std::filesystem::path& jsonl);

}  // namespace prdlab
