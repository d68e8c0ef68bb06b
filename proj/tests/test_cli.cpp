// End-to-end tests through the command-line binary (path injected by CMake).
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "jointtag/corpus.hpp"
#include "jointtag/serialize.hpp"

namespace fs = std::filesystem;
using namespace jointtag;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr interleaved
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(JOINTTAG_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult result;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe))
    result.output.append(buf, n);
  const int status = ::pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

// Tiny bilingual-looking corpus: enough structure for a 1-2 epoch smoke run.
const char* kCorpusLines =
    "ខ្ញុំ/PRO ស្រឡាញ់/VB ខ្មែរ/PN ។/SYM\n"
    "ខ្មែរ/PN ស្រឡាញ់/VB ខ្ញុំ/PRO ។/SYM\n"
    "ខ្ញុំ/PRO ទៅ/VB ផ្សារ/NN ។/SYM\n"
    "គាត់/PRO មាន/AUX សៀវភៅ/NN ថ្មី/JJ ។/SYM\n"
    "នេះ/DT ជា/VB សៀវភៅ/NN ល្អ/JJ ។/SYM\n"
    "ផ្សារ/NN នេះ/DT ធំ/JJ ណាស់/RB ។/SYM\n";

struct TempTree {
  fs::path root;
  TempTree() {
    root = fs::temp_directory_path() /
           ("jointtag_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(root);
  }
  ~TempTree() { fs::remove_all(root); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name, const std::string& contents) const {
    const auto p = root / name;
    std::ofstream out(p, std::ios::binary);
    out << contents;
    return p.string();
  }
  std::string path(const std::string& name) const { return (root / name).string(); }
};

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

std::string train_smoke_model(const TempTree& tree, const std::string& out_name,
                              const std::string& extra = "") {
  const auto corpus = tree.file("train_" + out_name + ".txt", kCorpusLines);
  const auto out_dir = tree.path(out_name);
  const auto r = run("train --train " + corpus + " --out " + out_dir +
                     " --hidden 8 --epochs 2 --batch 2 --seed 7 --threads 1 " + extra);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  return out_dir + "/model_final.kjt";
}

}  // namespace

TEST_CASE("train writes models and per-epoch records") {
  TempTree tree;
  const auto corpus = tree.file("train.txt", kCorpusLines);
  const auto out_dir = tree.path("run");
  const auto r = run("train --train " + corpus + " --dev " + corpus + " --out " +
                     out_dir + " --hidden 8 --epochs 2 --batch 2 --seed 7");
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(out_dir + "/model_final.kjt"));
  CHECK(fs::exists(out_dir + "/model_best.kjt"));
  CHECK(fs::exists(out_dir + "/training_log.jsonl"));
  CHECK(r.output.find("\"epoch\":1") != std::string::npos);
  CHECK(r.output.find("\"epoch\":2") != std::string::npos);
  CHECK(r.output.find("\"heldout_accuracy\":") != std::string::npos);

  const auto [params, vocab] = load_model(out_dir + "/model_final.kjt");
  CHECK(params.dims.hidden_dim == 8);
  CHECK(params.dims.stacks == 2);
}

TEST_CASE("identical seeds produce byte-identical model files") {
  TempTree tree;
  const auto a = train_smoke_model(tree, "a");
  const auto b = train_smoke_model(tree, "b");
  CHECK(read_bytes(a) == read_bytes(b));
}

TEST_CASE("config file supplies defaults and flags win") {
  TempTree tree;
  const auto corpus = tree.file("train.txt", kCorpusLines);
  const auto cfg = tree.file("run.cfg",
                             "# smoke configuration\n"
                             "hidden=4\n"
                             "epochs=1\n"
                             "batch=2\n"
                             "seed=9\n");
  const auto out_dir = tree.path("cfg_run");
  const auto r = run("train --config " + cfg + " --train " + corpus + " --out " +
                     out_dir + " --hidden 6");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  const auto [params, vocab] = load_model(out_dir + "/model_final.kjt");
  CHECK(params.dims.hidden_dim == 6);  // flag beats config
  CHECK(r.output.find("\"epoch\":1") != std::string::npos);
  CHECK(r.output.find("\"epoch\":2") == std::string::npos);  // config epochs=1
}

TEST_CASE("eval prints a report and the oracle mode is exact") {
  TempTree tree;
  const auto corpus = tree.file("train.txt", kCorpusLines);
  const auto model = train_smoke_model(tree, "eval");

  const auto r = run("eval --model " + model + " --test " + corpus);
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("Overall POS tagging accuracy") != std::string::npos);

  const auto oracle = run("eval --oracle --test " + corpus);
  INFO(oracle.output);
  CHECK(oracle.exit_code == 0);
  CHECK(oracle.output.find("accuracy   100.00%") != std::string::npos);
  CHECK(oracle.output.find("repaired first labels: 0") != std::string::npos);

  const auto records = run("eval --oracle --records --test " + corpus);
  CHECK(records.exit_code == 0);
  CHECK(records.output.find("\"metric\":\"seg_accuracy\",\"value\":1.000000") !=
        std::string::npos);
}

TEST_CASE("eval refuses corrupt and truncated models") {
  TempTree tree;
  const auto corpus = tree.file("train.txt", kCorpusLines);
  const auto model = train_smoke_model(tree, "corrupt");

  auto bytes = read_bytes(model);
  const auto truncated = tree.file("truncated.kjt", bytes.substr(0, bytes.size() / 2));
  const auto r1 = run("eval --model " + truncated + " --test " + corpus);
  CHECK(r1.exit_code != 0);
  CHECK(r1.output.find("truncated") != std::string::npos);

  bytes[bytes.size() - 10] ^= 0x11;
  const auto corrupt = tree.file("corrupt.kjt", bytes);
  const auto r2 = run("eval --model " + corrupt + " --test " + corpus);
  CHECK(r2.exit_code != 0);
  CHECK(r2.output.find("checksum") != std::string::npos);
}

TEST_CASE("tag output is format-closed and stable under re-tagging") {
  TempTree tree;
  const auto model = train_smoke_model(tree, "tag");

  // Raw unsegmented input: the characters of a training sentence, with an
  // arbitrary readability space that must be dropped.
  const auto input = tree.file("raw.txt",
                               "ខ្ញុំស្រឡាញ់ ខ្មែរ។\n"
                               "\n"
                               "ផ្សារនេះធំណាស់។\n");
  const auto r = run("tag --model " + model + " --in " + input);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);

  std::vector<std::string> lines;
  std::string cur;
  for (char c : r.output) {
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else
      cur.push_back(c);
  }
  REQUIRE(lines.size() == 3);
  CHECK(lines[1].empty());  // empty input line stays empty

  // Every non-empty output line re-parses, and its characters are exactly
  // the input characters without spaces.
  const auto parsed = parse_khpos_line(lines[0]);
  std::string stream;
  for (const auto& w : parsed.words) stream += encode_utf8(w.text);
  CHECK(stream == "ខ្ញុំស្រឡាញ់ខ្មែរ។");

  // Re-tagging the tagged output's own character stream reproduces it.
  const auto again_in = tree.file("again.txt", stream + "\n");
  const auto again = run("tag --model " + model + " --in " + again_in);
  REQUIRE(again.exit_code == 0);
  CHECK(again.output.substr(0, again.output.find('\n')) == lines[0]);
}

TEST_CASE("tag survives unknown characters") {
  TempTree tree;
  const auto model = train_smoke_model(tree, "unk");
  const auto input = tree.file("unk.txt", "ΩΩΩ\n");
  const auto r = run("tag --model " + model + " --in " + input);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  const auto line = r.output.substr(0, r.output.find('\n'));
  const auto parsed = parse_khpos_line(line);  // must re-parse cleanly
  std::string stream;
  for (const auto& w : parsed.words) stream += encode_utf8(w.text);
  CHECK(stream == "ΩΩΩ");
}

TEST_CASE("stats reports the histogram and corpus counts") {
  TempTree tree;
  const auto corpus = tree.file("train.txt", kCorpusLines);
  const auto r = run("stats --corpus " + corpus);
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("sentences        6") != std::string::npos);
  CHECK(r.output.find("Total") != std::string::npos);
  CHECK(r.output.find("SYM") != std::string::npos);
  CHECK(r.output.find("100.00%") != std::string::npos);
}

TEST_CASE("documented error paths exit nonzero") {
  TempTree tree;
  const auto r1 = run("train --train /nonexistent.txt --out " + tree.path("x"));
  CHECK(r1.exit_code != 0);

  const auto bad = tree.file("bad.txt", "a/NN\nbroken-line\n");
  const auto r2 = run("stats --corpus " + bad);
  CHECK(r2.exit_code != 0);
  CHECK(r2.output.find(":2:") != std::string::npos);  // names the line

  const auto r3 = run("eval --test " + bad);  // neither --model nor --oracle
  CHECK(r3.exit_code != 0);

  const auto r4 = run("nonsense");
  CHECK(r4.exit_code != 0);
}
