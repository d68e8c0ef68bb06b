#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "jointtag/corpus.hpp"
#include "jointtag/rng.hpp"

using namespace jointtag;
using Catch::Matchers::WithinAbs;

namespace {

// The corpus-format example sentence "I love Khmer": four words of 5, 7, 5
// and 1 code points, so tags sit at character positions 0, 5, 12, 17.
constexpr const char* kExampleLine = "ខ្ញុំ/PRO ស្រឡាញ់/VB ខ្មែរ/PN ។/SYM";

std::vector<TaggedSentence> random_corpus(Rng& rng, std::size_t sentences) {
  const std::u32string alphabet = U"abcdefgh";
  std::vector<TaggedSentence> out;
  for (std::size_t s = 0; s < sentences; ++s) {
    TaggedSentence sent;
    const std::size_t words = 1 + rng.next_below(6);
    for (std::size_t w = 0; w < words; ++w) {
      std::u32string text;
      const std::size_t len = 1 + rng.next_below(4);
      for (std::size_t k = 0; k < len; ++k)
        text.push_back(alphabet[rng.next_below(alphabet.size())]);
      sent.words.push_back(
          {std::move(text), static_cast<PosTag>(rng.next_below(kNumPosTags))});
    }
    out.push_back(std::move(sent));
  }
  return out;
}

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& contents) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("jointtag_corpus_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++) + ".txt");
    std::ofstream out(path, std::ios::binary);
    out << contents;
  }
  ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST_CASE("parse_khpos_line on the example sentence") {
  const auto s = parse_khpos_line(kExampleLine);
  REQUIRE(s.words.size() == 4);
  CHECK(s.words[0].tag == PosTag::kPro);
  CHECK(s.words[1].tag == PosTag::kVb);
  CHECK(s.words[2].tag == PosTag::kPn);
  CHECK(s.words[3].tag == PosTag::kSym);
  CHECK(s.words[0].text.size() == 5);
  CHECK(s.words[1].text.size() == 7);
  CHECK(s.words[2].text.size() == 5);
  CHECK(s.words[3].text == U"។");
  CHECK(format_khpos_line(s) == kExampleLine);
}

TEST_CASE("parse_khpos_line token handling") {
  SECTION("single token") {
    const auto s = parse_khpos_line("a/NN");
    REQUIRE(s.words.size() == 1);
    CHECK(s.words[0].text == U"a");
    CHECK(s.words[0].tag == PosTag::kNn);
  }

  SECTION("original 24-tag names are accepted and remapped") {
    const auto s = parse_khpos_line("x/VB_JJ");
    CHECK(s.words[0].tag == PosTag::kVb);
  }

  SECTION("runs of spaces separate tokens") {
    const auto s = parse_khpos_line("  a/NN   b/VB  ");
    REQUIRE(s.words.size() == 2);
  }

  SECTION("the last slash splits, so words may carry a literal slash") {
    const auto s = parse_khpos_line("a/b/NN");
    CHECK(s.words[0].text == U"a/b");
    CHECK(s.words[0].tag == PosTag::kNn);
  }

  SECTION("token without slash is a malformed-token error with the line number") {
    try {
      parse_khpos_line("abc", 17, "f.txt");
      FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
      CHECK(e.kind == CorpusErrorKind::kMalformedToken);
      CHECK(e.line == 17);
      CHECK(std::string(e.what()).find("17") != std::string::npos);
    }
  }

  SECTION("unknown tag is an unknown-tag error") {
    try {
      parse_khpos_line("a/ZZZ", 3);
      FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
      CHECK(e.kind == CorpusErrorKind::kUnknownTag);
    }
  }

  SECTION("empty word is rejected") {
    CHECK_THROWS_AS(parse_khpos_line("/NN"), CorpusError);
  }
}

TEST_CASE("remap_tag applies the full reduction table") {
  const std::pair<const char*, PosTag> mappings[] = {
      {"M", PosTag::kNn},    {"RPN", PosTag::kPro},  {"CUR", PosTag::kSym},
      {"DBL", PosTag::kSym}, {"ETC", PosTag::kSym},  {"KAN", PosTag::kSym},
      {"UH", PosTag::kPa},   {"VB_JJ", PosTag::kVb}, {"V_COM", PosTag::kVb}};
  for (const auto& [raw, want] : mappings) {
    const auto got = remap_tag(raw);
    REQUIRE(got.has_value());
    CHECK(*got == want);
  }
  for (auto name : kPosTagNames) {  // identity on the 15 revised tags
    const auto got = remap_tag(name);
    REQUIRE(got.has_value());
    CHECK(pos_tag_name(*got) == name);
  }
  CHECK_FALSE(remap_tag("NOPE").has_value());
  CHECK_FALSE(remap_tag("").has_value());

  // idempotence: remapping a remapped tag's name changes nothing
  for (const char* raw : {"M", "RPN", "CUR", "UH", "VB_JJ", "NN", "SYM"}) {
    const auto once = remap_tag(raw);
    const auto twice = remap_tag(pos_tag_name(*once));
    CHECK(*twice == *once);
  }
}

TEST_CASE("tag codes follow the published table order") {
  REQUIRE(kNumPosTags == 15);
  REQUIRE(kNumLabelClasses == 16);
  CHECK(static_cast<int>(PosTag::kAb) == 0);
  CHECK(static_cast<int>(PosTag::kVb) == 7);
  CHECK(static_cast<int>(PosTag::kNn) == 8);
  CHECK(static_cast<int>(PosTag::kSym) == 14);
  CHECK(kNsLabel == 15);
}

TEST_CASE("encode_sentence places tags at word-initial characters") {
  std::vector<TaggedSentence> corpus{
      {{{U"abc", PosTag::kVb}}},
      {{{U"ab", PosTag::kNn}, {U"c", PosTag::kPro}}},
  };
  const auto vocab = build_vocab(corpus);
  REQUIRE(vocab.size() == 3);
  CHECK(vocab.one_hot_dim() == 4);

  const auto one = encode_sentence(corpus[0], vocab);
  CHECK(one.label_ids == std::vector<LabelId>{static_cast<LabelId>(PosTag::kVb),
                                              kNsLabel, kNsLabel});
  const auto two = encode_sentence(corpus[1], vocab);
  CHECK(two.label_ids ==
        std::vector<LabelId>{static_cast<LabelId>(PosTag::kNn), kNsLabel,
                             static_cast<LabelId>(PosTag::kPro)});
}

TEST_CASE("the example sentence encodes with tags at offsets 0, 5, 12, 17") {
  const auto s = parse_khpos_line(kExampleLine);
  std::vector<TaggedSentence> corpus{s};
  const auto vocab = build_vocab(corpus);
  const auto encoded = encode_sentence(s, vocab);
  REQUIRE(encoded.label_ids.size() == 18);
  std::vector<std::pair<std::size_t, PosTag>> non_ns;
  for (std::size_t i = 0; i < encoded.label_ids.size(); ++i)
    if (encoded.label_ids[i] != kNsLabel)
      non_ns.emplace_back(i, static_cast<PosTag>(encoded.label_ids[i]));
  const std::vector<std::pair<std::size_t, PosTag>> want{
      {0, PosTag::kPro}, {5, PosTag::kVb}, {12, PosTag::kPn}, {17, PosTag::kSym}};
  CHECK(non_ns == want);
}

TEST_CASE("decode_labels inverts the encoding and repairs a leading NS") {
  SECTION("single word") {
    const std::vector<LabelId> labels{static_cast<LabelId>(PosTag::kVb), kNsLabel,
                                      kNsLabel};
    const auto s = decode_labels(U"abc", labels);
    REQUIRE(s.words.size() == 1);
    CHECK(s.words[0].text == U"abc");
    CHECK(s.words[0].tag == PosTag::kVb);
  }

  SECTION("two words") {
    const std::vector<LabelId> labels{static_cast<LabelId>(PosTag::kNn), kNsLabel,
                                      static_cast<LabelId>(PosTag::kPro)};
    const auto s = decode_labels(U"abc", labels);
    REQUIRE(s.words.size() == 2);
    CHECK(s.words[0].text == U"ab");
    CHECK(s.words[1].text == U"c");
  }

  SECTION("a leading NS opens a repaired NN word and is counted") {
    const std::vector<LabelId> labels{kNsLabel, kNsLabel,
                                      static_cast<LabelId>(PosTag::kVb)};
    std::size_t repairs = 0;
    const auto s = decode_labels(U"abc", labels, &repairs);
    CHECK(repairs == 1);
    REQUIRE(s.words.size() == 2);
    CHECK(s.words[0].text == U"ab");
    CHECK(s.words[0].tag == PosTag::kNn);
  }

  SECTION("length mismatch and empty input are fatal") {
    const std::vector<LabelId> labels{0};
    CHECK_THROWS_AS(decode_labels(U"ab", labels), ShapeError);
    CHECK_THROWS_AS(decode_labels(U"", {}), ShapeError);
  }
}

TEST_CASE("encode/decode round trip and label invariants on random corpora") {
  Rng rng(101);
  const auto corpus = random_corpus(rng, 60);
  const auto vocab = build_vocab(corpus);
  for (const auto& s : corpus) {
    const auto encoded = encode_sentence(s, vocab);
    REQUIRE(encoded.char_ids.size() == encoded.label_ids.size());
    REQUIRE(!encoded.char_ids.empty());
    CHECK(encoded.label_ids[0] != kNsLabel);
    std::size_t non_ns = 0;
    for (LabelId l : encoded.label_ids)
      if (l != kNsLabel) ++non_ns;
    CHECK(non_ns == s.words.size());

    std::size_t repairs = 0;
    const auto back = decode_labels(s.chars(), encoded.label_ids, &repairs);
    CHECK(repairs == 0);
    CHECK(back == s);
  }
}

TEST_CASE("build_vocab is deterministic and order independent") {
  Rng rng(102);
  auto corpus = random_corpus(rng, 20);
  const auto vocab = build_vocab(corpus);
  std::reverse(corpus.begin(), corpus.end());
  const auto reversed = build_vocab(corpus);
  CHECK(vocab.chars() == reversed.chars());

  for (std::size_t i = 0; i < vocab.size(); ++i)
    CHECK(vocab.lookup(vocab.chars()[i]) == i);
  CHECK(vocab.lookup(U'☃') == vocab.unk_index());
  for (std::size_t i = 1; i < vocab.size(); ++i)
    CHECK(vocab.chars()[i - 1] < vocab.chars()[i]);
}

TEST_CASE("unknown characters encode to the unknown index") {
  std::vector<TaggedSentence> corpus{{{{U"ab", PosTag::kNn}}}};
  const auto vocab = build_vocab(corpus);
  const TaggedSentence unseen{{{U"axz", PosTag::kVb}}};
  const auto encoded = encode_sentence(unseen, vocab);
  CHECK(encoded.char_ids[0] != vocab.unk_index());
  CHECK(encoded.char_ids[1] == vocab.unk_index());
  CHECK(encoded.char_ids[2] == vocab.unk_index());
}

TEST_CASE("tag_histogram counts, order, and totals") {
  SECTION("single word") {
    std::vector<TaggedSentence> corpus{{{{U"a", PosTag::kNn}}}};
    const auto hist = tag_histogram(corpus);
    REQUIRE(hist.size() == kNumPosTags);
    CHECK(hist[0].tag == PosTag::kNn);
    CHECK(hist[0].count == 1);
    CHECK_THAT(hist[0].percent, WithinAbs(100.0, 1e-9));
  }

  SECTION("percents sum to 100 and counts sum to the word count") {
    Rng rng(103);
    const auto corpus = random_corpus(rng, 40);
    std::size_t words = 0;
    for (const auto& s : corpus) words += s.words.size();
    const auto hist = tag_histogram(corpus);
    std::uint64_t total = 0;
    double pct = 0.0;
    for (const auto& row : hist) {
      total += row.count;
      pct += row.percent;
    }
    CHECK(total == words);
    CHECK_THAT(pct, WithinAbs(100.0, 0.1));
    for (std::size_t i = 1; i < hist.size(); ++i)
      CHECK(hist[i - 1].count >= hist[i].count);
  }
}

TEST_CASE("corpus file loading") {
  SECTION("well-formed file with blank lines and CRLF") {
    TempFile f("a/NN b/VB\r\n\nc/PRO\n");
    const auto corpus = load_corpus_file(f.path.string());
    REQUIRE(corpus.size() == 2);
    CHECK(corpus[0].words.size() == 2);
    CHECK(corpus[1].words.size() == 1);
  }

  SECTION("empty file yields zero sentences without error") {
    TempFile f("");
    CHECK(load_corpus_file(f.path.string()).empty());
  }

  SECTION("a malformed line aborts naming that line") {
    TempFile f("a/NN\nb/VB\nbroken\n");
    try {
      load_corpus_file(f.path.string());
      FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
      CHECK(e.line == 3);
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
  }

  SECTION("missing file is an error") {
    CHECK_THROWS_AS(load_corpus_file("/nonexistent/corpus.txt"), CorpusError);
  }

  SECTION("train_test_split_load loads both files") {
    TempFile train("a/NN\nb/VB\n");
    TempFile test("c/PRO\n");
    const auto [tr, te] = train_test_split_load(train.path.string(), test.path.string());
    CHECK(tr.size() == 2);
    CHECK(te.size() == 1);
  }
}
