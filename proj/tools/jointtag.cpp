// Command-line front end: training, evaluation, tagging raw text, and corpus
// statistics. Logs go to stderr; data products (records, reports, tagged
// text) go to stdout.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "jointtag/corpus.hpp"
#include "jointtag/log.hpp"
#include "jointtag/metrics.hpp"
#include "jointtag/network.hpp"
#include "jointtag/serialize.hpp"
#include "jointtag/training.hpp"

namespace jt = jointtag;

namespace {

std::string epoch_record_json(const jt::EpochRecord& r) {
  char buf[192];
  if (r.heldout_accuracy >= 0.0)
    std::snprintf(buf, sizeof(buf),
                  "{\"epoch\":%zu,\"mean_loss\":%.6f,\"heldout_accuracy\":%.6f,"
                  "\"wall_seconds\":%.3f}",
                  r.epoch, r.mean_loss, r.heldout_accuracy, r.wall_seconds);
  else
    std::snprintf(buf, sizeof(buf),
                  "{\"epoch\":%zu,\"mean_loss\":%.6f,\"heldout_accuracy\":null,"
                  "\"wall_seconds\":%.3f}",
                  r.epoch, r.mean_loss, r.wall_seconds);
  return buf;
}

struct TrainArgs {
  std::string train_path;
  std::string dev_path;
  std::string out_dir = ".";
  jt::TrainConfig config;
  bool no_shuffle = false;
};

int run_train(const TrainArgs& args) {
  auto corpus = jt::load_corpus_file(args.train_path);
  std::vector<jt::TaggedSentence> dev;
  if (!args.dev_path.empty()) dev = jt::load_corpus_file(args.dev_path);

  const auto vocab = jt::build_vocab(corpus);
  jt::log_info("vocabulary: " + std::to_string(vocab.size()) +
               " characters (one-hot dimension " + std::to_string(vocab.one_hot_dim()) +
               ", corpus-derived)");

  std::vector<jt::EncodedExample> examples;
  examples.reserve(corpus.size());
  for (const auto& s : corpus) examples.push_back(jt::encode_sentence(s, vocab));

  jt::TrainConfig cfg = args.config;
  cfg.shuffle = !args.no_shuffle;
  jt::log_info("training: hidden " + std::to_string(cfg.hidden_dim) + ", stacks " +
               std::to_string(cfg.stacks) + ", batch " + std::to_string(cfg.batch_size) +
               ", epochs " + std::to_string(cfg.epochs) + ", seed " +
               std::to_string(cfg.seed) + ", threads " + std::to_string(cfg.threads));

  std::filesystem::create_directories(args.out_dir);
  std::ofstream log_file(args.out_dir + "/training_log.jsonl", std::ios::trunc);

  const auto result = jt::train<float>(
      cfg, examples, dev, vocab, [&](const jt::EpochRecord& r) {
        const std::string line = epoch_record_json(r);
        std::cout << line << "\n" << std::flush;
        log_file << line << "\n" << std::flush;
        char msg[160];
        std::snprintf(msg, sizeof(msg), "epoch %zu  loss %.4f  heldout %s  %.1fs",
                      r.epoch, r.mean_loss,
                      r.heldout_accuracy >= 0.0
                          ? (std::to_string(r.heldout_accuracy * 100.0) + "%").c_str()
                          : "-",
                      r.wall_seconds);
        jt::log_info(msg);
      });

  const std::string final_path = args.out_dir + "/model_final.kjt";
  const std::string best_path = args.out_dir + "/model_best.kjt";
  jt::save_model(final_path, result.final_params, vocab);
  jt::save_model(best_path, result.best_params, vocab);
  jt::log_info("wrote " + final_path + " and " + best_path);
  if (result.best_epoch > 0)
    jt::log_info("best held-out accuracy " +
                 std::to_string(result.best_accuracy * 100.0) + "% at epoch " +
                 std::to_string(result.best_epoch));
  return 0;
}

struct EvalArgs {
  std::string model_path;
  std::string test_path;
  bool oracle = false;
  bool records = false;
  std::size_t batch = 128;
  std::size_t threads = 1;
};

int run_eval(const EvalArgs& args) {
  const auto corpus = jt::load_corpus_file(args.test_path);
  jt::EvalReport report;
  if (args.oracle) {
    // Reference vs itself through the encode/decode pipeline; every metric
    // must come out at exactly 1.0 with zero repairs.
    const auto vocab = jt::build_vocab(corpus);
    std::vector<jt::TaggedSentence> hyp;
    hyp.reserve(corpus.size());
    std::size_t repairs = 0;
    for (const auto& s : corpus) {
      const auto encoded = jt::encode_sentence(s, vocab);
      hyp.push_back(jt::decode_labels(s.chars(), encoded.label_ids, &repairs));
    }
    report = jt::score_corpora(corpus, hyp, repairs);
  } else {
    auto [params, vocab] = jt::load_model(args.model_path);
    report = jt::evaluate(params, corpus, vocab, args.batch, args.threads);
  }
  if (args.records)
    std::cout << jt::report_records(report);
  else
    std::cout << jt::format_report(report);
  return 0;
}

struct TagArgs {
  std::string model_path;
  std::string input_path;  // empty = stdin
  bool keep_spaces = false;
  std::size_t batch = 128;
  std::size_t threads = 1;
};

int run_tag(const TagArgs& args) {
  auto [params, vocab] = jt::load_model(args.model_path);

  std::ifstream file;
  std::istream* in = &std::cin;
  if (!args.input_path.empty()) {
    file.open(args.input_path, std::ios::binary);
    if (!file)
      throw jt::CorpusError(jt::CorpusErrorKind::kBadFile, args.input_path, 0,
                            "cannot open input");
    in = &file;
  }

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(*in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }

  // Raw inference input is unsegmented text; ASCII spaces are readability
  // marks, not boundaries, and are dropped unless --keep-spaces.
  std::vector<std::u32string> streams(lines.size());
  std::vector<std::vector<std::uint32_t>> sequences(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string bytes = lines[i];
    if (!args.keep_spaces)
      bytes.erase(std::remove(bytes.begin(), bytes.end(), ' '), bytes.end());
    try {
      streams[i] = jt::decode_utf8(bytes);
    } catch (const jt::Utf8Error& e) {
      throw jt::CorpusError(jt::CorpusErrorKind::kBadEncoding, args.input_path, i + 1,
                            e.what());
    }
    sequences[i].reserve(streams[i].size());
    for (char32_t cp : streams[i])
      sequences[i].push_back(static_cast<std::uint32_t>(vocab.lookup(cp)));
  }

  // Predict only non-empty lines; empty input lines stay empty output lines.
  std::vector<std::size_t> todo;
  std::vector<std::vector<std::uint32_t>> work;
  for (std::size_t i = 0; i < sequences.size(); ++i)
    if (!sequences[i].empty()) {
      todo.push_back(i);
      work.push_back(sequences[i]);
    }

  std::vector<std::vector<jt::LabelId>> predicted(work.size());
  if (args.threads <= 1 || work.size() < 2) {
    predicted = jt::predict_tags_batched(params, work, args.batch);
  } else {
    const std::size_t groups = std::min(args.threads, work.size());
    std::vector<std::thread> workers;
    for (std::size_t g = 0; g < groups; ++g)
      workers.emplace_back([&, g] {
        const std::size_t first = g * work.size() / groups;
        const std::size_t last = (g + 1) * work.size() / groups;
        std::span<const std::vector<std::uint32_t>> part(work.data() + first,
                                                         last - first);
        auto out = jt::predict_tags_batched(params, part, args.batch);
        for (std::size_t k = 0; k < out.size(); ++k)
          predicted[first + k] = std::move(out[k]);
      });
    for (auto& w : workers) w.join();
  }

  std::vector<std::string> output(lines.size());
  for (std::size_t k = 0; k < todo.size(); ++k) {
    const std::size_t i = todo[k];
    const auto sentence = jt::decode_labels(streams[i], predicted[k]);
    output[i] = jt::format_khpos_line(sentence);
  }
  for (const auto& out_line : output) std::cout << out_line << "\n";
  return 0;
}

int run_stats(const std::string& corpus_path) {
  const auto corpus = jt::load_corpus_file(corpus_path);
  const auto histogram = jt::tag_histogram(corpus);
  std::uint64_t total = 0;
  for (const auto& row : histogram) total += row.count;

  std::set<std::u32string> types;
  std::size_t chars = 0;
  for (const auto& s : corpus)
    for (const auto& w : s.words) {
      types.insert(w.text);
      chars += w.text.size();
    }
  const auto vocab = jt::build_vocab(corpus);

  std::printf("Tag        frequency   percentage\n");
  for (const auto& row : histogram)
    std::printf("%-10s %9llu   %6.2f%%\n",
                std::string(jt::pos_tag_name(row.tag)).c_str(),
                static_cast<unsigned long long>(row.count), row.percent);
  std::printf("Total      %9llu   100.00%%\n\n",
              static_cast<unsigned long long>(total));
  std::printf("sentences        %zu\n", corpus.size());
  std::printf("word tokens      %llu\n", static_cast<unsigned long long>(total));
  std::printf("word types       %zu\n", types.size());
  std::printf("characters       %zu\n", chars);
  std::printf("vocabulary size  %zu (one-hot dimension %zu)\n", vocab.size(),
              vocab.one_hot_dim());
  if (corpus.size() > 0)
    std::printf("words/sentence   %.2f\n",
                static_cast<double>(total) / static_cast<double>(corpus.size()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint Khmer word segmentation and POS tagging"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model on a tagged corpus");
  train->set_config("--config", "", "Read key=value defaults from a config file");
  train->add_option("--train", train_args.train_path, "Training corpus (word/TAG lines)")
      ->required();
  train->add_option("--dev", train_args.dev_path,
                    "Held-out corpus for per-epoch accuracy and best checkpoint");
  train->add_option("--out", train_args.out_dir, "Output directory");
  train->add_option("--hidden", train_args.config.hidden_dim, "Hidden dimension");
  train->add_option("--stacks", train_args.config.stacks, "LSTM stacks per direction");
  train->add_option("--batch", train_args.config.batch_size, "Batch size");
  train->add_option("--lr", train_args.config.learning_rate, "Adam learning rate");
  train->add_option("--epochs", train_args.config.epochs, "Training epochs");
  train->add_option("--seed", train_args.config.seed, "Random seed");
  train->add_option("--clip", train_args.config.clip_threshold,
                    "Global gradient-norm clip threshold, 0 disables");
  train->add_option("--threads", train_args.config.threads,
                    "Worker threads (1 = deterministic reference mode)");
  train->add_flag("--no-shuffle", train_args.no_shuffle, "Keep corpus batch order");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a model against a tagged corpus");
  eval->set_config("--config", "", "Read key=value defaults from a config file");
  auto* eval_model = eval->add_option("--model", eval_args.model_path, "Model file");
  eval->add_option("--test", eval_args.test_path, "Test corpus")->required();
  eval->add_flag("--oracle", eval_args.oracle,
                 "Score the reference against itself through encode/decode");
  eval->add_flag("--records", eval_args.records,
                 "Emit line-delimited records instead of the table");
  eval->add_option("--batch", eval_args.batch, "Inference batch size");
  eval->add_option("--threads", eval_args.threads, "Worker threads");

  TagArgs tag_args;
  auto* tag = app.add_subcommand("tag", "Segment and tag raw unsegmented text lines");
  tag->set_config("--config", "", "Read key=value defaults from a config file");
  tag->add_option("--model", tag_args.model_path, "Model file")->required();
  tag->add_option("--in", tag_args.input_path, "Input file (default: stdin)");
  tag->add_flag("--keep-spaces", tag_args.keep_spaces,
                "Treat ASCII spaces as characters instead of dropping them");
  tag->add_option("--batch", tag_args.batch, "Inference batch size");
  tag->add_option("--threads", tag_args.threads, "Worker threads");

  std::string stats_path;
  auto* stats = app.add_subcommand("stats", "Tag histogram and corpus counts");
  stats->set_config("--config", "", "Read key=value defaults from a config file");
  stats->add_option("--corpus", stats_path, "Corpus file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return run_train(train_args);
    if (eval->parsed()) {
      if (!eval_args.oracle && eval_args.model_path.empty()) {
        jt::log_error("eval requires --model (or --oracle)");
        return 1;
      }
      (void)eval_model;
      return run_eval(eval_args);
    }
    if (tag->parsed()) return run_tag(tag_args);
    if (stats->parsed()) return run_stats(stats_path);
  } catch (const std::exception& e) {
    jt::log_error(e.what());
    return 1;
  }
  return 1;
}
