#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "prdlab/error.hpp"
#include "prdlab/synthetic.hpp"
#include "prdlab/text.hpp"

using namespace prdlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::path(PRDLAB_TEST_TMP) / ("synthetic_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Synthetic, GenerationIsDeterministicPerId) {
  const auto a = generate_corpus(20, 32, 7);
  const auto b = generate_corpus(10, 32, 7, 10);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(a[10 + i].pixels, b[i].pixels);
    EXPECT_EQ(a[10 + i].report, b[i].report);
    EXPECT_EQ(a[10 + i].id, b[i].id);
  }
  EXPECT_NE(generate_pair(0, 32, 7).pixels, generate_pair(0, 32, 8).pixels);
}

TEST(Synthetic, ReportsDescribeTheirLabels) {
  for (const auto& pair : generate_corpus(300, 32, 3)) {
    EXPECT_EQ(recover_labels(pair.report), pair.labels) << pair.report;
  }
}

TEST(Synthetic, ReportWordsAreInVocabulary) {
  const auto& vocab = WordPieceVocab::builtin();
  for (const auto& pair : generate_corpus(300, 32, 4)) {
    for (const auto& pieces : tokenize(pair.report).subwords) {
      for (const auto& piece : pieces) EXPECT_NE(vocab.id(piece), vocab.unknown_id()) << piece;
    }
  }
}

TEST(Synthetic, GrammarOffersSeveralPhrasings) {
  for (std::size_t f = 0; f < kFindingCount; ++f) {
    EXPECT_GE(clause_options(f, true).size(), 2u) << finding_name(f);
    EXPECT_GE(clause_options(f, false).size(), 2u) << finding_name(f);
  }
}

TEST(Synthetic, RecoverLabelsRejectsForeignText) {
  EXPECT_THROW(recover_labels("the patient is happy."), InvalidArgument);
  EXPECT_THROW(recover_labels(""), InvalidArgument);
  const std::string clause(clause_options(0, true)[0]);
  EXPECT_THROW(recover_labels(clause + ". " + clause + "."), InvalidArgument);
}

TEST(Synthetic, GlyphsStayInTheirQuadrant) {
  const std::size_t side = 32, q = side / 2;
  for (std::size_t f = 0; f < kFindingCount; ++f) {
    const auto glyph = render_glyph(f, side);
    std::size_t lit = 0;
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double v = glyph[y * side + x];
        if (v == 0.0) continue;
        ++lit;
        EXPECT_EQ(y / q, f / 2);
        EXPECT_EQ(x / q, f % 2);
        EXPECT_EQ(v, kGlyphIntensity);
      }
    }
    EXPECT_GT(lit, 0u) << finding_name(f);
  }
}

TEST(Synthetic, PixelsAreInRangeAndMatchLabels) {
  for (const auto& pair : generate_corpus(50, 32, 5)) {
    for (double p : pair.pixels) {
      ASSERT_GE(p, 0.0);
      ASSERT_LE(p, 1.0);
    }
    // Glyph pixels sit above the noise floor exactly where the labels say.
    for (std::size_t f = 0; f < kFindingCount; ++f) {
      const auto glyph = render_glyph(f, 32);
      for (std::size_t i = 0; i < glyph.size(); ++i) {
        if (glyph[i] > 0.0) {
          ASSERT_EQ(pair.pixels[i] > 0.5, pair.labels[f]);
        }
      }
    }
  }
}

TEST(Synthetic, SmallSideIsRejected) {
  EXPECT_THROW(generate_pair(0, 8, 1), InvalidArgument);
  EXPECT_THROW(render_glyph(0, 15), InvalidArgument);
  EXPECT_THROW(render_glyph(4, 32), InvalidArgument);
  EXPECT_THROW(generate_corpus(0, 32, 1), InvalidArgument);
}

TEST(Synthetic, PgmRoundTripIsExact) {
  const auto dir = scratch_dir("pgm");
  const auto pair = generate_pair(3, 32, 1);
  write_pgm(dir / "img.pgm", pair.pixels, pair.side);
  std::size_t side = 0;
  EXPECT_EQ(read_pgm(dir / "img.pgm", side), pair.pixels);
  EXPECT_EQ(side, 32u);
}

TEST(Synthetic, ReadPgmRejectsOtherFormats) {
  const auto dir = scratch_dir("bad_pgm");
  std::ofstream(dir / "eight_bit.pgm") << "P5\n2 2\n255\n\x01\x02\x03\x04";
  std::size_t side = 0;
  EXPECT_THROW(read_pgm(dir / "eight_bit.pgm", side), RuntimeError);
  EXPECT_THROW(read_pgm(dir / "missing.pgm", side), RuntimeError);
}

TEST(Synthetic, CorpusSaveLoadRoundTrip) {
  const auto dir = scratch_dir("corpus");
  const auto pairs = generate_corpus(12, 32, 9, 100);
  save_corpus(dir, pairs);
  const auto loaded = load_corpus(dir / "corpus.jsonl");
  ASSERT_EQ(loaded.size(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(loaded[i].id, pairs[i].id);
    EXPECT_EQ(loaded[i].seed, pairs[i].seed);
    EXPECT_EQ(loaded[i].report, pairs[i].report);
    EXPECT_EQ(loaded[i].labels, pairs[i].labels);
    EXPECT_EQ(loaded[i].pixels, pairs[i].pixels);
  }
  EXPECT_THROW(load_corpus(dir / "nope.jsonl"), RuntimeError);
}
