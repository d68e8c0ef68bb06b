#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "jointtag/corpus.hpp"
#include "jointtag/network.hpp"

namespace jointtag {

struct WordSpan {
  std::size_t start = 0;  // code point offset
  std::size_t end = 0;    // exclusive
  PosTag tag{};

  bool operator==(const WordSpan&) const = default;
};

// Cumulative code-point offsets; spans tile [0, char_count) with no gaps.
inline std::vector<WordSpan> spans_of(const TaggedSentence& s) {
  std::vector<WordSpan> out;
  out.reserve(s.words.size());
  std::size_t offset = 0;
  for (const auto& w : s.words) {
    out.push_back({offset, offset + w.text.size(), w.tag});
    offset += w.text.size();
  }
  return out;
}

struct AlignmentError : std::runtime_error {
  std::size_t sentence_index;
  AlignmentError(std::size_t idx, const std::string& msg)
      : std::runtime_error(msg), sentence_index(idx) {}
};

inline void require_aligned(std::span<const TaggedSentence> ref,
                            std::span<const TaggedSentence> hyp) {
  if (ref.size() != hyp.size())
    throw AlignmentError(ref.size(), "corpora differ in sentence count");
  for (std::size_t i = 0; i < ref.size(); ++i)
    if (ref[i].chars() != hyp[i].chars())
      throw AlignmentError(i, "character streams differ at sentence " +
                                  std::to_string(i));
}

struct SegmentationScore {
  std::uint64_t ref_words = 0;
  std::uint64_t hyp_words = 0;
  std::uint64_t correct = 0;
  double accuracy = 0.0;   // correct / ref_words (the headline metric)
  double precision = 0.0;  // correct / hyp_words (diagnostic)
  double f1 = 0.0;         // diagnostic
};

// A reference word is correctly segmented iff the hypothesis contains a span
// with the identical (start, end); the denominator is the reference word
// count.
inline SegmentationScore segmentation_score(std::span<const TaggedSentence> ref,
                                            std::span<const TaggedSentence> hyp) {
  require_aligned(ref, hyp);
  SegmentationScore score;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto rs = spans_of(ref[i]);
    const auto hs = spans_of(hyp[i]);
    score.ref_words += rs.size();
    score.hyp_words += hs.size();
    // Both span lists are sorted by start; walk them together.
    std::size_t j = 0;
    for (const auto& r : rs) {
      while (j < hs.size() && hs[j].start < r.start) ++j;
      if (j < hs.size() && hs[j].start == r.start && hs[j].end == r.end) ++score.correct;
    }
  }
  if (score.ref_words > 0)
    score.accuracy = static_cast<double>(score.correct) /
                     static_cast<double>(score.ref_words);
  if (score.hyp_words > 0)
    score.precision = static_cast<double>(score.correct) /
                      static_cast<double>(score.hyp_words);
  if (score.accuracy + score.precision > 0.0)
    score.f1 = 2.0 * score.accuracy * score.precision /
               (score.accuracy + score.precision);
  return score;
}

inline double segmentation_accuracy(std::span<const TaggedSentence> ref,
                                    std::span<const TaggedSentence> hyp) {
  return segmentation_score(ref, hyp).accuracy;
}

struct PerTagAccuracy {
  PosTag tag{};
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  double accuracy = 0.0;            // correct span AND matching tag (primary)
  std::uint64_t start_correct = 0;  // matching tag at the word-start position
  double start_accuracy = 0.0;      // diagnostic, end boundary not required
};

struct TagAccuracyResult {
  std::vector<PerTagAccuracy> per_tag;  // all 15 tags, descending by total
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  double overall_accuracy = 0.0;
  double start_overall_accuracy = 0.0;
};

// Primary rule: a reference word with tag i counts correct iff its span is
// correctly segmented and the hypothesis span carries tag i. The diagnostic
// start-only rule drops the end-boundary requirement (the label predicted at
// the reference word-start position must equal the tag).
inline TagAccuracyResult tag_accuracy(std::span<const TaggedSentence> ref,
                                      std::span<const TaggedSentence> hyp) {
  require_aligned(ref, hyp);
  std::array<PerTagAccuracy, kNumPosTags> rows{};
  for (std::size_t i = 0; i < kNumPosTags; ++i) rows[i].tag = static_cast<PosTag>(i);
  std::uint64_t start_correct_total = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto rs = spans_of(ref[i]);
    const auto hs = spans_of(hyp[i]);
    std::size_t j = 0;
    for (const auto& r : rs) {
      auto& row = rows[static_cast<std::size_t>(r.tag)];
      ++row.total;
      while (j < hs.size() && hs[j].start < r.start) ++j;
      const bool start_match = j < hs.size() && hs[j].start == r.start;
      if (start_match && hs[j].tag == r.tag) {
        ++row.start_correct;
        ++start_correct_total;
      }
      if (start_match && hs[j].end == r.end && hs[j].tag == r.tag) ++row.correct;
    }
  }
  TagAccuracyResult result;
  for (auto& row : rows) {
    if (row.total > 0) {
      row.accuracy = static_cast<double>(row.correct) / static_cast<double>(row.total);
      row.start_accuracy =
          static_cast<double>(row.start_correct) / static_cast<double>(row.total);
    }
    result.correct += row.correct;
    result.total += row.total;
  }
  result.per_tag.assign(rows.begin(), rows.end());
  std::stable_sort(result.per_tag.begin(), result.per_tag.end(),
                   [](const PerTagAccuracy& a, const PerTagAccuracy& b) {
                     return a.total > b.total;
                   });
  if (result.total > 0) {
    result.overall_accuracy =
        static_cast<double>(result.correct) / static_cast<double>(result.total);
    result.start_overall_accuracy =
        static_cast<double>(start_correct_total) / static_cast<double>(result.total);
  }
  return result;
}

struct ErrorDecomposition {
  double eps_s = 0.0;  // segmentation error
  double eps_p = 0.0;  // tagging error
  double eps_t = 0.0;  // total; always eps_s + eps_p exactly as computed
};

// Composition form for a two-stage pipeline: component errors add up.
inline ErrorDecomposition error_decomposition(double seg_accuracy, double pos_accuracy) {
  ErrorDecomposition e;
  e.eps_s = 1.0 - seg_accuracy;
  e.eps_p = 1.0 - pos_accuracy;
  e.eps_t = e.eps_s + e.eps_p;
  return e;
}

// Decomposition for a joint model, whose overall accuracy already subsumes
// segmentation mistakes: the total error is 1 - overall and the tagging
// component is the residual.
inline ErrorDecomposition joint_error_decomposition(double seg_accuracy,
                                                    double overall_accuracy) {
  ErrorDecomposition e;
  e.eps_s = 1.0 - seg_accuracy;
  e.eps_t = 1.0 - overall_accuracy;
  e.eps_p = e.eps_t - e.eps_s;
  return e;
}

struct EvalReport {
  std::size_t sentences = 0;
  SegmentationScore seg;
  TagAccuracyResult tags;
  ErrorDecomposition errors;  // joint decomposition
  std::uint64_t repaired_first_label_count = 0;
};

// Scores an aligned hypothesis corpus against the reference.
inline EvalReport score_corpora(std::span<const TaggedSentence> ref,
                                std::span<const TaggedSentence> hyp,
                                std::uint64_t repaired = 0) {
  EvalReport report;
  report.sentences = ref.size();
  report.seg = segmentation_score(ref, hyp);
  report.tags = tag_accuracy(ref, hyp);
  report.errors =
      joint_error_decomposition(report.seg.accuracy, report.tags.overall_accuracy);
  report.repaired_first_label_count = repaired;
  return report;
}

// Runs the model over the reference corpus and scores the decoded output.
// Unknown characters map to the unknown index; decode repairs are counted.
template <class T>
EvalReport evaluate(const ModelParams<T>& params, std::span<const TaggedSentence> corpus,
                    const CharVocab& vocab, std::size_t batch_size = 128,
                    std::size_t threads = 1) {
  require_shape(!corpus.empty(), "evaluate: empty corpus");
  std::vector<std::vector<std::uint32_t>> sequences(corpus.size());
  std::vector<std::u32string> streams(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    streams[i] = corpus[i].chars();
    sequences[i].reserve(streams[i].size());
    for (char32_t cp : streams[i])
      sequences[i].push_back(static_cast<std::uint32_t>(vocab.lookup(cp)));
  }

  std::vector<std::vector<LabelId>> predicted(corpus.size());
  if (threads <= 1 || corpus.size() < 2) {
    predicted = predict_tags_batched(params, sequences, batch_size);
  } else {
    const std::size_t groups = std::min(threads, corpus.size());
    std::vector<std::thread> workers;
    for (std::size_t g = 0; g < groups; ++g)
      workers.emplace_back([&, g] {
        const std::size_t first = g * corpus.size() / groups;
        const std::size_t last = (g + 1) * corpus.size() / groups;
        std::span<const std::vector<std::uint32_t>> part(sequences.data() + first,
                                                         last - first);
        auto labels = predict_tags_batched(params, part, batch_size);
        for (std::size_t k = 0; k < labels.size(); ++k)
          predicted[first + k] = std::move(labels[k]);
      });
    for (auto& w : workers) w.join();
  }

  std::vector<TaggedSentence> hyp(corpus.size());
  std::size_t repaired = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    hyp[i] = decode_labels(streams[i], predicted[i], &repaired);
  return score_corpora(corpus, hyp, repaired);
}

// ---------------------------------------------------------------------------
// Report rendering: a human-readable table block and line-delimited records.
// ---------------------------------------------------------------------------

namespace detail {
inline std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * fraction);
  return buf;
}
inline std::string num(double v, int digits = 6) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}
}  // namespace detail

inline std::string format_report(const EvalReport& r) {
  std::string out;
  out += "Word segmentation accuracy\n";
  out += "  accuracy   " + detail::pct(r.seg.accuracy) + "  (" +
         std::to_string(r.seg.correct) + " / " + std::to_string(r.seg.ref_words) +
         " reference words)\n";
  out += "  precision  " + detail::pct(r.seg.precision) + "  (" +
         std::to_string(r.seg.hyp_words) + " predicted words)   f1  " +
         detail::pct(r.seg.f1) + "\n\n";
  out += "POS tag accuracy breakdown\n";
  out += "  tag    total    correct  accuracy   start-only\n";
  for (const auto& row : r.tags.per_tag) {
    char line[128];
    std::snprintf(line, sizeof(line), "  %-5s %8llu %8llu   %-9s  %s\n",
                  std::string(pos_tag_name(row.tag)).c_str(),
                  static_cast<unsigned long long>(row.total),
                  static_cast<unsigned long long>(row.correct),
                  row.total > 0 ? detail::pct(row.accuracy).c_str() : "-",
                  row.total > 0 ? detail::pct(row.start_accuracy).c_str() : "-");
    out += line;
  }
  out += "  (accuracy = correctly segmented span with matching tag;"
         " start-only = matching tag at the reference word start)\n\n";
  out += "Overall POS tagging accuracy\n";
  out += "  accuracy   " + detail::pct(r.tags.overall_accuracy) + "  (" +
         std::to_string(r.tags.correct) + " / " + std::to_string(r.tags.total) +
         ")   start-only  " + detail::pct(r.tags.start_overall_accuracy) + "\n\n";
  out += "Error decomposition (total = segmentation + tagging)\n";
  out += "  seg error  " + detail::pct(r.errors.eps_s) + "   tagging error  " +
         detail::pct(r.errors.eps_p) + "   total  " + detail::pct(r.errors.eps_t) + "\n";
  out += "Sentences: " + std::to_string(r.sentences) +
         "   repaired first labels: " + std::to_string(r.repaired_first_label_count) +
         "\n";
  return out;
}

inline std::string report_records(const EvalReport& r) {
  std::string out;
  auto rec = [&out](const std::string& body) { out += "{" + body + "}\n"; };
  rec("\"metric\":\"seg_accuracy\",\"value\":" + detail::num(r.seg.accuracy));
  rec("\"metric\":\"seg_precision\",\"value\":" + detail::num(r.seg.precision));
  rec("\"metric\":\"seg_f1\",\"value\":" + detail::num(r.seg.f1));
  for (const auto& row : r.tags.per_tag)
    rec("\"metric\":\"tag_accuracy\",\"tag\":\"" + std::string(pos_tag_name(row.tag)) +
        "\",\"correct\":" + std::to_string(row.correct) +
        ",\"total\":" + std::to_string(row.total) +
        ",\"value\":" + detail::num(row.accuracy) +
        ",\"start_only\":" + detail::num(row.start_accuracy));
  rec("\"metric\":\"overall_accuracy\",\"value\":" +
      detail::num(r.tags.overall_accuracy));
  rec("\"metric\":\"start_overall_accuracy\",\"value\":" +
      detail::num(r.tags.start_overall_accuracy));
  rec("\"metric\":\"error_decomposition\",\"eps_s\":" + detail::num(r.errors.eps_s) +
      ",\"eps_p\":" + detail::num(r.errors.eps_p) +
      ",\"eps_t\":" + detail::num(r.errors.eps_t));
  rec("\"metric\":\"repaired_first_labels\",\"value\":" +
      std::to_string(r.repaired_first_label_count));
  return out;
}

}  // namespace jointtag
