#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "jointtag/log.hpp"
#include "jointtag/mathcore.hpp"
#include "jointtag/utf8.hpp"

namespace jointtag {

// The 15-tag revised set. Codes are fixed by this order and are stable
// across runs; serialized models embed the name table.
enum class PosTag : std::uint8_t {
  kAb = 0,
  kAux,
  kCc,
  kCd,
  kDt,
  kIn,
  kJj,
  kVb,
  kNn,
  kPn,
  kPa,
  kPro,
  kQt,
  kRb,
  kSym,
};

inline constexpr std::size_t kNumPosTags = 15;
// Per-character label classes: the 15 tags plus the no-space sentinel.
inline constexpr std::size_t kNumLabelClasses = 16;
using LabelId = std::uint8_t;
inline constexpr LabelId kNsLabel = 15;

inline constexpr std::array<std::string_view, kNumPosTags> kPosTagNames = {
    "AB", "AUX", "CC", "CD", "DT", "IN", "JJ", "VB",
    "NN", "PN",  "PA", "PRO", "QT", "RB", "SYM"};

inline std::string_view pos_tag_name(PosTag t) {
  return kPosTagNames[static_cast<std::size_t>(t)];
}

inline std::optional<PosTag> pos_tag_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumPosTags; ++i)
    if (kPosTagNames[i] == name) return static_cast<PosTag>(i);
  return std::nullopt;
}

// Reduces the original 24-tag scheme to the 15-tag set. The 15 revised tags
// map to themselves; the nine retired tags fold into their host categories.
inline std::optional<PosTag> remap_tag(std::string_view raw) {
  if (auto t = pos_tag_from_name(raw)) return t;
  if (raw == "M") return PosTag::kNn;
  if (raw == "RPN") return PosTag::kPro;
  if (raw == "CUR" || raw == "DBL" || raw == "ETC" || raw == "KAN") return PosTag::kSym;
  if (raw == "UH") return PosTag::kPa;
  if (raw == "VB_JJ" || raw == "V_COM") return PosTag::kVb;
  return std::nullopt;
}

struct TaggedWord {
  std::u32string text;  // code points, never empty
  PosTag tag;

  bool operator==(const TaggedWord&) const = default;
};

struct TaggedSentence {
  std::vector<TaggedWord> words;

  bool operator==(const TaggedSentence&) const = default;

  std::u32string chars() const {
    std::u32string out;
    for (const auto& w : words) out += w.text;
    return out;
  }
  std::size_t char_count() const {
    std::size_t n = 0;
    for (const auto& w : words) n += w.text.size();
    return n;
  }
};

enum class CorpusErrorKind { kMalformedToken, kUnknownTag, kBadFile, kBadEncoding };

struct CorpusError : std::runtime_error {
  CorpusErrorKind kind;
  std::string file;
  std::size_t line;

  CorpusError(CorpusErrorKind k, std::string f, std::size_t ln, const std::string& msg)
      : std::runtime_error(f.empty() ? msg + " (line " + std::to_string(ln) + ")"
                                     : f + ":" + std::to_string(ln) + ": " + msg),
        kind(k),
        file(std::move(f)),
        line(ln) {}
};

// One corpus line: tokens separated by runs of ASCII spaces, each token
// word/TAG with the tag after the LAST slash.
inline TaggedSentence parse_khpos_line(std::string_view line, std::size_t line_no = 0,
                                       const std::string& file = {}) {
  TaggedSentence out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && line[pos] == ' ') ++pos;
    if (pos >= line.size()) break;
    std::size_t end = line.find(' ', pos);
    if (end == std::string_view::npos) end = line.size();
    std::string_view token = line.substr(pos, end - pos);
    pos = end;

    const std::size_t slash = token.rfind('/');
    if (slash == std::string_view::npos)
      throw CorpusError(CorpusErrorKind::kMalformedToken, file, line_no,
                        "token without '/': \"" + std::string(token) + "\"");
    std::string_view word_bytes = token.substr(0, slash);
    std::string_view raw_tag = token.substr(slash + 1);
    if (word_bytes.empty())
      throw CorpusError(CorpusErrorKind::kMalformedToken, file, line_no,
                        "empty word in token \"" + std::string(token) + "\"");
    auto tag = remap_tag(raw_tag);
    if (!tag)
      throw CorpusError(CorpusErrorKind::kUnknownTag, file, line_no,
                        "unknown tag \"" + std::string(raw_tag) + "\"");
    std::u32string text;
    try {
      text = decode_utf8(word_bytes);
    } catch (const Utf8Error& e) {
      throw CorpusError(CorpusErrorKind::kBadEncoding, file, line_no, e.what());
    }
    out.words.push_back({std::move(text), *tag});
  }
  if (out.words.empty())
    throw CorpusError(CorpusErrorKind::kMalformedToken, file, line_no, "empty sentence");
  return out;
}

// Serializes back to the corpus line format; parse(format(s)) == s.
inline std::string format_khpos_line(const TaggedSentence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.words.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += encode_utf8(s.words[i].text);
    out.push_back('/');
    out += pos_tag_name(s.words[i].tag);
  }
  return out;
}

// Bijection between the corpus's code points and dense indices. Index order
// is ascending code point, so the vocabulary is independent of sentence
// order. Code points not present map to the reserved trailing unknown index.
class CharVocab {
 public:
  CharVocab() = default;
  explicit CharVocab(std::vector<char32_t> sorted_chars) : chars_(std::move(sorted_chars)) {}

  static CharVocab build(std::span<const TaggedSentence> corpus) {
    std::vector<char32_t> cps;
    for (const auto& s : corpus)
      for (const auto& w : s.words) cps.insert(cps.end(), w.text.begin(), w.text.end());
    std::sort(cps.begin(), cps.end());
    cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
    return CharVocab(std::move(cps));
  }

  std::size_t size() const { return chars_.size(); }
  std::size_t unk_index() const { return chars_.size(); }
  std::size_t one_hot_dim() const { return chars_.size() + 1; }
  const std::vector<char32_t>& chars() const { return chars_; }

  std::size_t lookup(char32_t cp) const {
    auto it = std::lower_bound(chars_.begin(), chars_.end(), cp);
    if (it != chars_.end() && *it == cp)
      return static_cast<std::size_t>(it - chars_.begin());
    return unk_index();
  }

 private:
  std::vector<char32_t> chars_;
};

inline CharVocab build_vocab(std::span<const TaggedSentence> corpus) {
  return CharVocab::build(corpus);
}

// Per-character training example: the sentence's code points in order with
// no separator; a word's first character carries the word's tag, every other
// character carries NS.
struct EncodedExample {
  std::vector<std::uint32_t> char_ids;
  std::vector<LabelId> label_ids;
};

inline EncodedExample encode_sentence(const TaggedSentence& s, const CharVocab& vocab) {
  EncodedExample out;
  out.char_ids.reserve(s.char_count());
  out.label_ids.reserve(s.char_count());
  for (const auto& w : s.words) {
    require_shape(!w.text.empty(), "encode_sentence: empty word");
    for (std::size_t k = 0; k < w.text.size(); ++k) {
      out.char_ids.push_back(static_cast<std::uint32_t>(vocab.lookup(w.text[k])));
      out.label_ids.push_back(k == 0 ? static_cast<LabelId>(w.tag) : kNsLabel);
    }
  }
  return out;
}

// Inverse of encode_sentence: a word opens at every non-NS label. A leading
// NS label cannot open a word; it is repaired by opening one tagged NN (the
// most frequent tag) and the repair is counted for reporting.
inline TaggedSentence decode_labels(std::u32string_view chars,
                                    std::span<const LabelId> labels,
                                    std::size_t* repair_count = nullptr) {
  require_shape(chars.size() == labels.size(), "decode_labels: length mismatch");
  require_shape(!chars.empty(), "decode_labels: empty input");
  TaggedSentence out;
  for (std::size_t i = 0; i < chars.size(); ++i) {
    bool opens = labels[i] != kNsLabel;
    PosTag tag{};
    if (i == 0 && !opens) {
      opens = true;
      tag = PosTag::kNn;
      if (repair_count != nullptr) ++*repair_count;
    } else if (opens) {
      tag = static_cast<PosTag>(labels[i]);
    }
    if (opens)
      out.words.push_back({std::u32string(1, chars[i]), tag});
    else
      out.words.back().text.push_back(chars[i]);
  }
  return out;
}

struct TagCount {
  PosTag tag;
  std::uint64_t count;
  double percent;
};

// Counts over remapped tags, sorted descending by count (ties by tag code).
inline std::vector<TagCount> tag_histogram(std::span<const TaggedSentence> corpus) {
  std::array<std::uint64_t, kNumPosTags> counts{};
  std::uint64_t total = 0;
  for (const auto& s : corpus)
    for (const auto& w : s.words) {
      ++counts[static_cast<std::size_t>(w.tag)];
      ++total;
    }
  std::vector<TagCount> out;
  for (std::size_t i = 0; i < kNumPosTags; ++i)
    out.push_back({static_cast<PosTag>(i), counts[i],
                   total == 0 ? 0.0 : 100.0 * static_cast<double>(counts[i]) /
                                          static_cast<double>(total)});
  std::stable_sort(out.begin(), out.end(), [](const TagCount& a, const TagCount& b) {
    return a.count > b.count;
  });
  return out;
}

// Loads one corpus file; any parse error aborts with file/line diagnostics.
// Blank lines are skipped (files often end with a trailing newline).
inline std::vector<TaggedSentence> load_corpus_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw CorpusError(CorpusErrorKind::kBadFile, path, 0, "cannot open file");
  std::vector<TaggedSentence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(parse_khpos_line(line, line_no, path));
  }
  if (out.empty()) log_info("corpus file " + path + " contains no sentences");
  log_info(path + ": " + std::to_string(out.size()) + " sentences");
  return out;
}

inline std::pair<std::vector<TaggedSentence>, std::vector<TaggedSentence>>
train_test_split_load(const std::string& train_path, const std::string& test_path) {
  return {load_corpus_file(train_path), load_corpus_file(test_path)};
}

}  // namespace jointtag
