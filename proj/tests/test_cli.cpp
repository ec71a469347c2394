#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using harakat::testing::TempDir;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI through the shell; stdout is captured, stderr discarded.
Run cli(const std::string& args) {
  const std::string cmd = std::string(HARAKAT_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// HARAKAT_UPDATE_GOLDEN=1 rewrites the files instead of comparing.
void check_golden(const std::string& name, const std::string& actual) {
  const auto path = std::filesystem::path(HARAKAT_GOLDEN_DIR) / (name + ".txt");
  if (std::getenv("HARAKAT_UPDATE_GOLDEN")) {
    std::ofstream(path, std::ios::binary) << actual;
    return;
  }
  REQUIRE_MESSAGE(std::filesystem::exists(path), path.string());
  CHECK(read_file(path) == actual);
}

/// A trained toy checkpoint shared by the end-to-end cases.
struct Trained {
  TempDir dir{"cli"};
  std::filesystem::path corpus, run;
  Trained() {
    corpus = dir / "corpus";
    run = dir / "run";
    REQUIRE(cli("synth-corpus -n 4 --seed 3 -o " + corpus.string()).code == 0);
    const Run r = cli("train -q --preset toy --fusion cross_attention --seed 5 --train-manifest " +
                      (corpus / "manifest.jsonl").string() + " --dev-manifest " +
                      (corpus / "manifest.jsonl").string() + " -o " + run.string() +
                      " --set train.epochs_phase1=1 --set train.epochs_phase2=1"
                      " --set train.batch_size=2 --set train.max_steps=3");
    REQUIRE(r.code == 0);
  }
};

Trained& trained() {
  static Trained t;
  return t;
}

}  // namespace

TEST_CASE("help output is stable") {
  check_golden("help", cli("--help").out);
  for (const char* sub : {"train", "evaluate", "predict", "strip", "synth-corpus", "gradcheck"}) {
    CAPTURE(sub);
    const Run r = cli(std::string(sub) + " --help");
    CHECK(r.code == 0);
    check_golden(std::string("help_") + sub, r.out);
  }
}

TEST_CASE("exit codes") {
  TempDir dir("codes");
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("strip --no-such-flag").code == 2);
  CHECK(cli("evaluate").code == 2);  // --manifest is required
  CHECK(cli("train --preset toy").code == 2);  // no train manifest
  CHECK(cli("train --preset toy --set model.colour=red --train-manifest x").code == 2);
  CHECK(cli("train --preset toy --train-manifest " + (dir / "absent.jsonl").string()).code == 3);
  CHECK(cli("strip -t " + quote("َab")).code == 3);
  std::ofstream(dir / "bad.jsonl") << "{\"id\":1}\n";
  CHECK(cli("evaluate --oracle -m " + (dir / "bad.jsonl").string()).code == 3);
}

TEST_CASE("strip, dump labels and apply them back") {
  TempDir dir("strip");
  const std::string text = "عَندُكُو شوربِة abc";
  const Run plain = cli("strip -t " + quote(text));
  CHECK(plain.code == 0);
  CHECK(plain.out == "عندكو شوربة abc\n");

  const Run labels = cli("strip --labels -t " + quote(text));
  REQUIRE(labels.code == 0);
  CHECK(labels.out.rfind("U+0639\tع\tfatha\n", 0) == 0);
  std::ofstream(dir / "labels.tsv", std::ios::binary) << labels.out;
  const Run back = cli("strip --apply " + (dir / "labels.tsv").string());
  CHECK(back.code == 0);
  CHECK(back.out == text + "\n");

  std::ofstream(dir / "in.txt", std::ios::binary) << text << "\n";
  CHECK(cli("strip -f " + (dir / "in.txt").string()).out == plain.out);
}

TEST_CASE("oracle evaluation scores zero in both modes") {
  TempDir dir("oracle");
  REQUIRE(cli("synth-corpus -n 2 --seed 1 --seconds 0.5 -o " + dir.path().string()).code == 0);
  const Run r = cli("evaluate --oracle --json -m " + (dir / "manifest.jsonl").string());
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  REQUIRE(j.at("reports").size() == 2);
  for (const auto& rep : j.at("reports")) {
    CHECK(rep.at("wer") == 0.0);
    CHECK(rep.at("cer") == 0.0);
  }
}

TEST_CASE("train, evaluate and predict end to end") {
  Trained& t = trained();
  const auto latest = t.run / "latest";

  SUBCASE("run directory contents and the fusion override") {
    CHECK(std::filesystem::exists(t.run / "run_config.json"));
    CHECK(std::filesystem::exists(t.run / "metrics.jsonl"));
    const json manifest = json::parse(read_file(latest / "manifest.json"));
    CHECK(manifest.at("format") == "harakat-checkpoint");
    CHECK(manifest.at("model_config").at("fusion") == "cross_attention");
    CHECK(manifest.at("train_config").at("seed") == 5);
    std::size_t lines = 0;
    std::ifstream metrics(t.run / "metrics.jsonl");
    for (std::string line; std::getline(metrics, line);) {
      const json row = json::parse(line);
      CHECK(row.contains("dev_text_only"));
      CHECK(row.contains("dev_text_speech"));
      ++lines;
    }
    CHECK(lines == 2);
  }

  SUBCASE("evaluate --mode both prints one row per mode") {
    const std::string m = (t.corpus / "manifest.jsonl").string();
    const Run table = cli("evaluate --checkpoint " + latest.string() + " -m " + m);
    REQUIRE(table.code == 0);
    CHECK(table.out.find("text_only") != std::string::npos);
    CHECK(table.out.find("text+speech") != std::string::npos);
    const Run js = cli("evaluate --json --mode text_only --checkpoint " + latest.string() + " -m " + m);
    REQUIRE(js.code == 0);
    const json j = json::parse(js.out);
    REQUIRE(j.at("reports").size() == 1);
    CHECK(j.at("reports")[0].at("mode") == "text_only");
    CHECK(cli("evaluate --mode sideways --checkpoint " + latest.string() + " -m " + m).code == 2);
  }

  SUBCASE("predict is deterministic and keeps the base text") {
    const std::string args = "predict --json --checkpoint " + latest.string() + " -t " + quote("كتب درس");
    const Run a = cli(args), b = cli(args);
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    const json j = json::parse(a.out);
    const std::string out = j.at("output");
    CHECK(cli("strip -t " + quote(out)).out == "كتب درس\n");
    CHECK(j.at("labels").size() == 7);

    const std::string wav = (t.corpus / "synth-0000.wav").string();
    const Run with_audio = cli("predict --checkpoint " + latest.string() + " -t " + quote("كتب") + " -a " + wav);
    CHECK(with_audio.code == 0);
    CHECK(cli("predict --checkpoint " + latest.string() + " -t ''").code == 2);
    CHECK(cli("predict --checkpoint " + latest.string() + " -t " + quote("كتب") + " -a " +
              (t.dir / "missing.wav").string()).code == 3);
    CHECK(cli("predict --checkpoint " + (t.dir / "nope").string() + " -t " + quote("كتب")).code == 2);
  }

  SUBCASE("resume continues from the saved step") {
    const Run r = cli("train -q --resume " + latest.string() + " --train-manifest " +
                      (t.corpus / "manifest.jsonl").string() + " -o " + (t.dir / "resumed").string() +
                      " --preset toy --fusion cross_attention --seed 5"
                      " --set train.epochs_phase1=1 --set train.epochs_phase2=1"
                      " --set train.batch_size=2 --set train.max_steps=4");
    REQUIRE(r.code == 0);
    const json state = json::parse(read_file(t.dir / "resumed" / "latest" / "state.json"));
    CHECK(state.at("step") == 4);
  }
}
