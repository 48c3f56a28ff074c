#include "prdlab/text.hpp"

#include <array>
#include <cctype>
#include <sstream>

#include "prdlab/embedded_data.hpp"
#include "prdlab/error.hpp"

namespace prdlab {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Non-empty, non-comment lines split on tabs.
std::vector<std::vector<std::string>> parse_tsv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.emplace_back(trim(line.substr(start, tab - start)));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

bool ends_with(std::string_view word, std::string_view suffix) {
  return word.size() > suffix.size() && word.substr(word.size() - suffix.size()) == suffix;
}

constexpr std::array<std::string_view, 4> kNounSuffixes = {"tion", "sion", "sis", "oma"};
constexpr std::array<std::string_view, 4> kAdjSuffixes = {"ous", "al", "ic", "ar"};
constexpr std::array<std::string_view, 2> kVerbSuffixes = {"ed", "ing"};
constexpr std::array<std::string_view, 4> kCopulas = {"is", "are", "was", "were"};

}  // namespace

std::string_view pos_name(PosTag tag) {
  switch (tag) {
    case PosTag::Noun: return "NOUN";
    case PosTag::Verb: return "VERB";
    case PosTag::Adj: return "ADJ";
    case PosTag::Other: return "OTHER";
  }
  return "OTHER";
}

PosTag pos_from_name(std::string_view name) {
  if (name == "NOUN") return PosTag::Noun;
  if (name == "VERB") return PosTag::Verb;
  if (name == "ADJ") return PosTag::Adj;
  if (name == "OTHER") return PosTag::Other;
  throw InvalidArgument("unknown part-of-speech tag '" + std::string(name) + "'");
}

std::size_t TokenizedReport::subword_count() const {
  std::size_t n = 0;
  for (const auto& pieces : subwords) n += pieces.size();
  return n;
}

std::string TokenizedReport::text() const { return join_tokens(tokens); }

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

WordPieceVocab WordPieceVocab::parse(std::string_view text) {
  WordPieceVocab vocab;
  // One piece per line; no comment syntax, since continuation pieces start with '#'.
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string piece(trim(text.substr(pos, end - pos)));
    pos = end + 1;
    if (piece.empty()) continue;
    if (vocab.index_.contains(piece)) continue;
    vocab.index_.emplace(piece, vocab.pieces_.size());
    vocab.pieces_.push_back(std::move(piece));
  }
  const auto unk = vocab.index_.find(std::string(kUnknown));
  if (unk == vocab.index_.end()) throw InvalidArgument("word-piece vocabulary lacks [UNK]");
  vocab.unknown_id_ = unk->second;
  return vocab;
}

const WordPieceVocab& WordPieceVocab::builtin() {
  static const WordPieceVocab vocab = parse(embedded::kVocabTxt);
  return vocab;
}

std::vector<std::string> WordPieceVocab::split(std::string_view word) const {
  if (word.size() > kMaxWordChars) return {std::string(kUnknown)};
  std::vector<std::string> pieces;
  std::size_t start = 0;
  std::string candidate;
  while (start < word.size()) {
    std::size_t end = word.size();
    bool matched = false;
    while (end > start) {
      candidate.assign(start > 0 ? "##" : "");
      candidate.append(word.substr(start, end - start));
      if (index_.contains(candidate)) {
        matched = true;
        break;
      }
      --end;
    }
    if (matched) {
      pieces.push_back(candidate);
      start = end;
    } else {
      pieces.emplace_back(kUnknown);
      ++start;
    }
  }
  return pieces;
}

std::size_t WordPieceVocab::id(std::string_view piece) const {
  const auto it = index_.find(std::string(piece));
  return it == index_.end() ? unknown_id_ : it->second;
}

bool WordPieceVocab::contains(std::string_view piece) const {
  return index_.contains(std::string(piece));
}

Lexicon Lexicon::parse(std::string_view tags_tsv, std::string_view antonyms_tsv) {
  Lexicon lex;
  for (const auto& row : parse_tsv(tags_tsv)) {
    if (row.size() != 2) throw InvalidArgument("lexicon rows need 'word<TAB>TAG'");
    lex.tags_[row[0]] = pos_from_name(row[1]);
  }
  for (const auto& row : parse_tsv(antonyms_tsv)) {
    if (row.size() != 2) throw InvalidArgument("antonym rows need 'word<TAB>antonym'");
    lex.antonyms_[row[0]] = row[1];
    lex.antonyms_[row[1]] = row[0];
  }
  return lex;
}

const Lexicon& Lexicon::builtin() {
  static const Lexicon lex = parse(embedded::kLexiconTsv, embedded::kAntonymsTsv);
  return lex;
}

std::optional<PosTag> Lexicon::lookup(std::string_view word) const {
  const auto it = tags_.find(std::string(word));
  if (it == tags_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::string> Lexicon::antonym(std::string_view word) const {
  const auto it = antonyms_.find(std::string(word));
  if (it == antonyms_.end()) return std::nullopt;
  return it->second;
}

TokenizedReport tokenize(std::string_view text, const WordPieceVocab& vocab) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isspace(uc)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else if (!std::ispunct(uc)) {
      current.push_back(static_cast<char>(std::tolower(uc)));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  if (tokens.empty()) throw InvalidArgument("empty report");
  return from_tokens(std::move(tokens), vocab);
}

TokenizedReport from_tokens(std::vector<std::string> tokens, const WordPieceVocab& vocab) {
  if (tokens.empty()) throw InvalidArgument("empty report");
  TokenizedReport report;
  report.subwords.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (t.empty()) throw InvalidArgument("empty token");
    report.subwords.push_back(vocab.split(t));
  }
  report.tokens = std::move(tokens);
  return report;
}

PosTag tag_word(std::string_view word, const Lexicon& lexicon) {
  if (auto tag = lexicon.lookup(word)) return *tag;
  for (auto s : kNounSuffixes)
    if (ends_with(word, s)) return PosTag::Noun;
  for (auto s : kAdjSuffixes)
    if (ends_with(word, s)) return PosTag::Adj;
  for (auto s : kCopulas)
    if (word == s) return PosTag::Verb;
  for (auto s : kVerbSuffixes)
    if (ends_with(word, s)) return PosTag::Verb;
  return PosTag::Other;
}

TokenizedReport pos_tag(TokenizedReport report, const Lexicon& lexicon) {
  if (report.tokens.empty()) throw InvalidArgument("pos_tag: empty report");
  report.pos.clear();
  report.pos.reserve(report.tokens.size());
  for (const auto& t : report.tokens) report.pos.push_back(tag_word(t, lexicon));
  return report;
}

}  // namespace prdlab
