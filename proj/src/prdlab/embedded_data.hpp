#pragma once

#include <string_view>

// Contents of data/*.tsv and data/vocab.txt, compiled into the library.
namespace prdlab::embedded {

extern const std::string_view kLexiconTsv;
extern const std::string_view kAntonymsTsv;
extern const std::string_view kVocabTxt;

}  // namespace prdlab::embedded
