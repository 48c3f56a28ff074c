#include "prdlab/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "prdlab/error.hpp"
#include "prdlab/rng.hpp"

namespace prdlab {

namespace {

constexpr std::array<std::string_view, kFindingCount> kFindingNames = {"effusion", "pneumothorax",
                                                                       "cardiomegaly", "opacity"};

constexpr std::string_view kEffusionPos[] = {"there is pleural effusion", "pleural effusion is present"};
constexpr std::string_view kEffusionNeg[] = {"there is no pleural effusion", "pleural effusion is absent",
                                             "there is no evidence of pleural effusion"};
constexpr std::string_view kPneumoPos[] = {"there is pneumothorax", "pneumothorax is present"};
constexpr std::string_view kPneumoNeg[] = {"there is no pneumothorax", "pneumothorax is absent",
                                           "there is no evidence of pneumothorax"};
constexpr std::string_view kHeartPos[] = {"the heart is enlarged", "there is cardiomegaly"};
constexpr std::string_view kHeartNeg[] = {"the heart is normal", "there is no cardiomegaly"};
constexpr std::string_view kOpacityPos[] = {"there is focal opacity", "the lungs are abnormal"};
constexpr std::string_view kOpacityNeg[] = {"the lungs are clear", "there is no focal opacity"};

// Clause order inside a report.
constexpr std::array<std::size_t, kFindingCount> kClauseOrder = {3, 0, 1, 2};

constexpr std::uint16_t kMaxGray = 65535;

double quantize(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * kMaxGray) / kMaxGray;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string_view finding_name(std::size_t finding) {
  if (finding >= kFindingCount) throw InvalidArgument("finding index out of range");
  return kFindingNames[finding];
}

std::span<const std::string_view> clause_options(std::size_t finding, bool positive) {
  switch (finding) {
    case 0: return positive ? std::span<const std::string_view>(kEffusionPos) : kEffusionNeg;
    case 1: return positive ? std::span<const std::string_view>(kPneumoPos) : kPneumoNeg;
    case 2: return positive ? std::span<const std::string_view>(kHeartPos) : kHeartNeg;
    case 3: return positive ? std::span<const std::string_view>(kOpacityPos) : kOpacityNeg;
    default: throw InvalidArgument("finding index out of range");
  }
}

Tensor SyntheticPair::image() const { return Tensor::from({side, side, 1}, pixels); }

std::vector<double> render_glyph(std::size_t finding, std::size_t side) {
  if (finding >= kFindingCount) throw InvalidArgument("finding index out of range");
  if (side < kMinImageSide) {
    throw InvalidArgument("image side " + std::to_string(side) + " is too small to render glyphs (minimum " +
                          std::to_string(kMinImageSide) + ")");
  }
  const std::size_t q = side / 2;
  const std::size_t oy = (finding / 2) * q;
  const std::size_t ox = (finding % 2) * q;
  const double center = (static_cast<double>(q) - 1.0) / 2.0;
  const double radius = 0.35 * static_cast<double>(q);
  const double bar = std::max(1.0, 0.1 * static_cast<double>(q));

  std::vector<double> canvas(side * side, 0.0);
  for (std::size_t y = 0; y < q; ++y) {
    for (std::size_t x = 0; x < q; ++x) {
      const double dy = static_cast<double>(y) - center;
      const double dx = static_cast<double>(x) - center;
      const double dist = std::hypot(dx, dy);
      bool on = false;
      switch (finding) {
        case 0: on = dist <= radius; break;                                                      // disk
        case 1: on = std::max(std::abs(dx), std::abs(dy)) <= radius &&
                     (std::abs(dx) <= bar || std::abs(dy) <= bar); break;                        // plus
        case 2: on = std::max(std::abs(dx), std::abs(dy)) <= 0.8 * radius; break;               // square
        case 3: on = dist <= radius && dist >= 0.55 * radius; break;                             // ring
      }
      if (on) canvas[(oy + y) * side + ox + x] = kGlyphIntensity;
    }
  }
  return canvas;
}

SyntheticPair generate_pair(std::uint64_t id, std::size_t side, std::uint64_t corpus_seed) {
  if (side < kMinImageSide) {
    throw InvalidArgument("image side " + std::to_string(side) + " is too small to render glyphs (minimum " +
                          std::to_string(kMinImageSide) + ")");
  }
  SyntheticPair pair;
  pair.id = id;
  pair.seed = derive_seed(corpus_seed, id);
  pair.side = side;
  Rng rng(pair.seed);
  for (auto& label : pair.labels) label = rng.below(2) == 1;

  pair.pixels.resize(side * side);
  for (double& p : pair.pixels) p = rng.uniform(0.0, kNoiseAmplitude);
  for (std::size_t f = 0; f < kFindingCount; ++f) {
    if (!pair.labels[f]) continue;
    const auto glyph = render_glyph(f, side);
    for (std::size_t i = 0; i < glyph.size(); ++i) pair.pixels[i] += glyph[i];
  }
  for (double& p : pair.pixels) p = quantize(p);

  std::string report;
  for (std::size_t f : kClauseOrder) {
    const auto options = clause_options(f, pair.labels[f]);
    if (!report.empty()) report += ' ';
    report += options[rng.below(options.size())];
    report += '.';
  }
  pair.report = std::move(report);
  return pair;
}

std::vector<SyntheticPair> generate_corpus(std::size_t n, std::size_t side, std::uint64_t seed,
                                           std::uint64_t first_id) {
  if (n == 0) throw InvalidArgument("corpus size must be at least 1");
  std::vector<SyntheticPair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pairs.push_back(generate_pair(first_id + i, side, seed));
  return pairs;
}

Labels recover_labels(std::string_view report) {
  Labels labels{};
  std::array<bool, kFindingCount> seen{};
  std::size_t pos = 0;
  while (pos < report.size()) {
    std::size_t end = report.find('.', pos);
    if (end == std::string_view::npos) end = report.size();
    const std::string_view clause = trim(report.substr(pos, end - pos));
    pos = end + 1;
    if (clause.empty()) continue;
    bool matched = false;
    for (std::size_t f = 0; f < kFindingCount && !matched; ++f) {
      for (bool positive : {true, false}) {
        for (auto option : clause_options(f, positive)) {
          if (option == clause) {
            if (seen[f]) throw InvalidArgument("finding mentioned twice: " + std::string(clause));
            seen[f] = true;
            labels[f] = positive;
            matched = true;
          }
        }
      }
    }
    if (!matched) throw InvalidArgument("clause outside the report grammar: '" + std::string(clause) + "'");
  }
  for (std::size_t f = 0; f < kFindingCount; ++f) {
    if (!seen[f]) throw InvalidArgument("report does not mention " + std::string(kFindingNames[f]));
  }
  return labels;
}

void write_pgm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t side) {
  if (pixels.size() != side * side) throw InvalidArgument("write_pgm: pixel count does not match side");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << "P5\n" << side << ' ' << side << '\n' << kMaxGray << '\n';
  for (double p : pixels) {
    const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(p, 0.0, 1.0) * kMaxGray));
    const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xFF)};
    out.write(bytes, 2);
  }
  if (!out) throw RuntimeError("failed writing " + path.string());
}

std::vector<double> read_pgm(const std::filesystem::path& path, std::size_t& side) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot read " + path.string());
  std::string magic;
  std::size_t w = 0;
  std::size_t h = 0;
  unsigned maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if (magic != "P5" || w == 0 || w != h || maxval != kMaxGray) {
    throw RuntimeError(path.string() + ": expected a square 16-bit binary PGM");
  }
  side = w;
  std::vector<double> pixels(w * h);
  for (double& p : pixels) {
    unsigned char bytes[2];
    if (!in.read(reinterpret_cast<char*>(bytes), 2)) throw RuntimeError(path.string() + ": truncated image");
    p = static_cast<double>((bytes[0] << 8) | bytes[1]) / kMaxGray;
  }
  return pixels;
}

void save_corpus(const std::filesystem::path& dir, std::span<const SyntheticPair> pairs) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream out(dir / "corpus.jsonl");
  if (!out) throw RuntimeError("cannot write " + (dir / "corpus.jsonl").string());
  for (const auto& pair : pairs) {
    std::ostringstream name;
    name << "images/" << pair.id << ".pgm";
    write_pgm(dir / name.str(), pair.pixels, pair.side);
    nlohmann::json row;
    row["id"] = pair.id;
    row["report"] = pair.report;
    row["labels"] = pair.labels;
    row["image_file"] = name.str();
    row["seed"] = pair.seed;
    out << row.dump() << '\n';
  }
}

std::vector<SyntheticPair> load_corpus(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw RuntimeError("cannot read corpus " + jsonl.string());
  std::vector<SyntheticPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto row = nlohmann::json::parse(line);
      SyntheticPair pair;
      pair.id = row.at("id").get<std::uint64_t>();
      pair.report = row.at("report").get<std::string>();
      pair.labels = row.at("labels").get<Labels>();
      pair.seed = row.value("seed", std::uint64_t{0});
      pair.pixels = read_pgm(jsonl.parent_path() / row.at("image_file").get<std::string>(), pair.side);
      pairs.push_back(std::move(pair));
    } catch (const nlohmann::json::exception& e) {
      throw RuntimeError(jsonl.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (pairs.empty()) throw RuntimeError("corpus " + jsonl.string() + " is empty");
  return pairs;
}

}  // namespace prdlab
