// Drives the qars binary end to end. ctest passes the binary path as the
// first argument; the rest go to doctest.
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <string>

#include "qars/data.hpp"
#include "qars/encoder.hpp"
#include "qars/estimator.hpp"
#include "support/synthetic.hpp"
#include "support/test_util.hpp"

namespace {

std::string g_qars_bin;

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args,
                  const std::filesystem::path& workdir) {
  const auto out_path = workdir / "cli_stdout.txt";
  const auto err_path = workdir / "cli_stderr.txt";
  const std::string command = "cd '" + workdir.string() + "' && '" +
                              g_qars_bin + "' " + args + " > '" +
                              out_path.string() + "' 2> '" +
                              err_path.string() + "'";
  const int status = std::system(command.c_str());
  CliResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = qars::testing::read_text(out_path);
  result.err = qars::testing::read_text(err_path);
  return result;
}

}  // namespace

using namespace qars;
using qars::testing::TempDir;
using qars::testing::read_text;
using qars::testing::write_text;

TEST_CASE("usage errors exit 2, missing files exit 1") {
  TempDir tmp("cli_usage");
  CHECK(run_cli("no-such-command", tmp.path()).exit_code == 2);
  CHECK(run_cli("score --metric bleu --bogus-flag x", tmp.path()).exit_code ==
        2);
  CHECK(run_cli("", tmp.path()).exit_code == 2);
  CHECK(run_cli("score --metric rouge --hyp a --ref b", tmp.path()).exit_code ==
        2);
  CHECK(run_cli("stats --in a --expected b --layout mystery", tmp.path())
            .exit_code == 2);

  const auto missing =
      run_cli("evaluate --pred nope.txt --gold nope.txt", tmp.path());
  CHECK(missing.exit_code == 1);
  CHECK(missing.out.empty());          // diagnostics stay off stdout
  CHECK(!missing.err.empty());

  CHECK(run_cli("--help", tmp.path()).exit_code == 0);
  CHECK(run_cli("score --help", tmp.path()).exit_code == 0);
}

TEST_CASE("evaluate prints Pearson x100 with two decimals") {
  TempDir tmp("cli_eval");
  write_text(tmp.file("pred.txt"), "3.0\n4.0\n5.0\n");
  write_text(tmp.file("gold.txt"), "3.0\n4.0\n5.0\n");
  const auto identity = run_cli("evaluate --pred pred.txt --gold gold.txt",
                                tmp.path());
  CHECK(identity.exit_code == 0);
  CHECK(identity.out == "100.00\n");

  write_text(tmp.file("rev.txt"), "5.0\n4.0\n3.0\n");
  CHECK(run_cli("evaluate --pred rev.txt --gold gold.txt", tmp.path()).out ==
        "-100.00\n");

  write_text(tmp.file("const.txt"), "3.0\n3.0\n3.0\n");
  const auto degenerate =
      run_cli("evaluate --pred const.txt --gold gold.txt", tmp.path());
  CHECK(degenerate.exit_code == 1);
  CHECK(degenerate.err.find("variance") != std::string::npos);
}

TEST_CASE("score bleu and chrf on identical files print 1.0000") {
  TempDir tmp("cli_score");
  write_text(tmp.file("hyp.txt"), "ala ma kota w domu\npies biega po parku\n");
  std::filesystem::copy_file(tmp.file("hyp.txt"), tmp.file("ref.txt"));
  const auto bleu_run =
      run_cli("score --metric bleu --hyp hyp.txt --ref ref.txt", tmp.path());
  CHECK(bleu_run.exit_code == 0);
  CHECK(bleu_run.out == "1.0000\n");
  const auto chrf_run =
      run_cli("score --metric chrf --hyp hyp.txt --ref ref.txt", tmp.path());
  CHECK(chrf_run.out == "1.0000\n");

  const auto per_segment = run_cli(
      "score --metric chrf --hyp hyp.txt --ref ref.txt --per-segment seg.tsv",
      tmp.path());
  CHECK(per_segment.exit_code == 0);
  CHECK(read_text(tmp.file("seg.tsv")) == "0\t1.0000\n1\t1.0000\n");
}

TEST_CASE("score bertscore from QEEMB files; refuses to run without inputs") {
  TempDir tmp("cli_bs");
  Rng rng(5);
  std::vector<SegmentEmbeddings<float>> segments;
  segments.push_back(SegmentEmbeddings<float>::from_tokens(
      qars::testing::random_tensor<float>({3, 8}, rng)));
  segments.push_back(SegmentEmbeddings<float>::from_tokens(
      qars::testing::random_tensor<float>({2, 8}, rng)));
  save_precomputed(tmp.file("both.qeemb"), segments);

  const auto self = run_cli(
      "score --metric bertscore --hyp-emb both.qeemb --ref-emb both.qeemb "
      "--per-segment bs.tsv",
      tmp.path());
  CHECK(self.exit_code == 0);
  CHECK(self.out == "1.0000\n");  // self-match F1
  CHECK(read_text(tmp.file("bs.tsv")) ==
        "0\t1.0000\t1.0000\t1.0000\n1\t1.0000\t1.0000\t1.0000\n");

  const auto bare = run_cli("score --metric bertscore", tmp.path());
  CHECK(bare.exit_code == 1);
  CHECK(bare.err.find("--hyp-emb") != std::string::npos);
}

TEST_CASE("score bertscore through a model directory; threads don't change output") {
  TempDir tmp("cli_bs_model");
  // Build and save a small estimator whose encoder embeds the text.
  auto vocab = text::Vocab::build(
      {text::tokenize_ws("ala ma kota pies biega dom park")}, 1);
  EncoderConfig config;
  config.vocab_size = vocab.size();
  config.dim = 8;
  config.layers = 1;
  config.heads = 2;
  config.max_seq_len = 16;
  EncoderModel<float> encoder(config);
  Rng rng(6, 1);
  encoder.init(rng);
  RegressorHead<float> head(feature_width(EstimatorMode::reference_free, 8),
                            8, 4);
  head.init(rng);
  const EstimatorModel<float> model(std::move(encoder), std::move(vocab),
                                    std::move(head),
                                    EstimatorMode::reference_free);
  save_estimator(model, tmp.file("model"));

  write_text(tmp.file("hyp.txt"), "ala ma kota\npies biega\n");
  write_text(tmp.file("ref.txt"), "ala ma kota\npies biega po parku\n");
  const auto scored = run_cli(
      "score --metric bertscore --model model --hyp hyp.txt --ref ref.txt "
      "--component precision",
      tmp.path());
  CHECK(scored.exit_code == 0);
  CHECK(!scored.out.empty());

  // Worker count must never change results.
  const auto threaded = run_cli(
      "--threads 4 score --metric bertscore --model model --hyp hyp.txt "
      "--ref ref.txt --component precision",
      tmp.path());
  CHECK(threaded.out == scored.out);
}

TEST_CASE("stats prints key: value lines") {
  TempDir tmp("cli_stats");
  write_text(tmp.file("in.tsv"), "one two\thyp one\tref\nsrc b\ta b c d\tr\n");
  write_text(tmp.file("expected.tsv"), "3.0\n5.0\n");
  const auto result = run_cli(
      "stats --in in.tsv --expected expected.tsv --layout nonblind",
      tmp.path());
  CHECK(result.exit_code == 0);
  CHECK(result.out ==
        "segments: 2\navg_source_tokens: 2.00\navg_hyp_tokens: 3.00\n"
        "min_score: 3.00\navg_score: 4.00\n");

  write_text(tmp.file("blind.tsv"), "hyp one\n");
  write_text(tmp.file("blind_expected.tsv"), "4.5\n");
  const auto blind = run_cli(
      "stats --in blind.tsv --expected blind_expected.tsv --layout blind",
      tmp.path());
  CHECK(blind.out.find("avg_source_tokens") == std::string::npos);
}

TEST_CASE("split writes four files with seeded determinism") {
  TempDir tmp("cli_split");
  std::string in_text, expected_text;
  for (int i = 0; i < 37; ++i) {
    in_text += "hyp number " + std::to_string(i) + "\n";
    expected_text += std::to_string(1 + (i % 5)) + "\n";
  }
  write_text(tmp.file("in.tsv"), in_text);
  write_text(tmp.file("expected.tsv"), expected_text);

  const auto result = run_cli(
      "split --in in.tsv --expected expected.tsv --seed 9 --dev-size 10 "
      "--out-prefix part",
      tmp.path());
  CHECK(result.exit_code == 0);
  CHECK(result.out == "27\t10\n");
  CHECK(read_text(tmp.file("part.dev.in.tsv")).size() > 0);

  const auto count_lines = [](const std::string& text) {
    return std::count(text.begin(), text.end(), '\n');
  };
  CHECK(count_lines(read_text(tmp.file("part.train.in.tsv"))) == 27);
  CHECK(count_lines(read_text(tmp.file("part.dev.in.tsv"))) == 10);
  CHECK(count_lines(read_text(tmp.file("part.train.expected.tsv"))) == 27);
  CHECK(count_lines(read_text(tmp.file("part.dev.expected.tsv"))) == 10);

  // Train + dev reassemble the input multiset; rerunning is byte-identical.
  const auto first_dev = read_text(tmp.file("part.dev.in.tsv"));
  run_cli("split --in in.tsv --expected expected.tsv --seed 9 --dev-size 10 "
          "--out-prefix again",
          tmp.path());
  CHECK(read_text(tmp.file("again.dev.in.tsv")) == first_dev);

  const auto oversized = run_cli(
      "split --in in.tsv --expected expected.tsv --seed 9 --dev-size 37",
      tmp.path());
  CHECK(oversized.exit_code == 1);

  // Task-scale sanity: 3970 merged records, 100 dev, 3870 train.
  std::string big_in, big_expected;
  for (int i = 0; i < 3970; ++i) {
    big_in += "src " + std::to_string(i) + "\thyp " + std::to_string(i) + "\n";
    big_expected += std::to_string(1 + (i % 5)) + "\n";
  }
  write_text(tmp.file("big.in.tsv"), big_in);
  write_text(tmp.file("big.expected.tsv"), big_expected);
  const auto big = run_cli(
      "split --in big.in.tsv --expected big.expected.tsv --seed 3 "
      "--dev-size 100 --out-prefix big",
      tmp.path());
  CHECK(big.out == "3870\t100\n");
}

TEST_CASE("merge-bt glues blind and nonblind data into reference-free rows") {
  TempDir tmp("cli_merge");
  write_text(tmp.file("blind.tsv"), "Kot siedzi.\nPies biega.\n");
  write_text(tmp.file("blind_expected.tsv"), "4.0\n3.5\n");
  write_text(tmp.file("bt.txt"), "The cat sits.\nThe dog runs.\n");
  write_text(tmp.file("nonblind.tsv"), "The bird sings.\tPtak spiewa.\tPtak.\n");
  write_text(tmp.file("nonblind_expected.tsv"), "4.5\n");

  const auto result = run_cli(
      "merge-bt --blind-in blind.tsv --blind-expected blind_expected.tsv "
      "--bt-src bt.txt --nonblind-in nonblind.tsv "
      "--nonblind-expected nonblind_expected.tsv --out-prefix merged",
      tmp.path());
  CHECK(result.exit_code == 0);
  CHECK(result.out == "3\n");
  CHECK(read_text(tmp.file("merged.in.tsv")) ==
        "The bird sings.\tPtak spiewa.\n"
        "The cat sits.\tKot siedzi.\n"
        "The dog runs.\tPies biega.\n");
  CHECK(read_text(tmp.file("merged.expected.tsv")) == "4.5\n4\n3.5\n");

  write_text(tmp.file("short_bt.txt"), "Only one.\n");
  const auto mismatch = run_cli(
      "merge-bt --blind-in blind.tsv --blind-expected blind_expected.tsv "
      "--bt-src short_bt.txt --nonblind-in nonblind.tsv "
      "--nonblind-expected nonblind_expected.tsv --out-prefix bad",
      tmp.path());
  CHECK(mismatch.exit_code == 1);
}

TEST_CASE("train, predict and evaluate form a pipeline") {
  TempDir tmp("cli_train");
  qars::testing::SyntheticOptions opt;
  opt.records = 28;
  opt.vocab = 12;
  opt.min_len = 4;
  opt.max_len = 6;
  opt.seed = 5;
  const auto records = qars::testing::planted_dataset(opt);
  const std::vector<QERecord> train_set(records.begin(), records.begin() + 20);
  const std::vector<QERecord> dev_set(records.begin() + 20, records.end());
  write_dataset(train_set, tmp.file("train.in.tsv"),
                tmp.file("train.expected.tsv"), Layout::nonblind);
  write_dataset(dev_set, tmp.file("dev.in.tsv"), tmp.file("dev.expected.tsv"),
                Layout::nonblind);
  write_text(tmp.file("config.json"), R"({
    "optimizer": "adam",
    "lr_frozen_phase": 0.005,
    "lr_unfrozen_phase": 0.001,
    "frozen_epochs": 1,
    "batch_size": 4,
    "accumulated_batches": 1,
    "dropout": 0.0,
    "hidden_units": [16, 8],
    "seed": 11,
    "max_epochs": 3,
    "encoder": {"dim": 8, "layers": 1, "heads": 2, "max_seq_len": 16}
  })");

  const auto trained = run_cli(
      "train --config config.json --train-in train.in.tsv "
      "--train-expected train.expected.tsv --dev-in dev.in.tsv "
      "--dev-expected dev.expected.tsv --mode reference --out run",
      tmp.path());
  CHECK(trained.exit_code == 0);
  // stdout carries the epoch TSV (epoch, train_mse, dev_pearson).
  CHECK(std::count(trained.out.begin(), trained.out.end(), '\n') == 3);
  CHECK(trained.out == read_text(tmp.file("run/train_log.tsv")));
  CHECK(std::filesystem::exists(tmp.file("run/best/params.bin")));
  CHECK(std::filesystem::exists(tmp.file("run/best/vocab.txt")));

  const auto predicted =
      run_cli("predict --model run/best --in dev.in.tsv", tmp.path());
  CHECK(predicted.exit_code == 0);
  CHECK(std::count(predicted.out.begin(), predicted.out.end(), '\n') == 8);
  write_text(tmp.file("pred.txt"), predicted.out);

  const auto evaluated = run_cli(
      "evaluate --pred pred.txt --gold dev.expected.tsv", tmp.path());
  CHECK(evaluated.exit_code == 0);
  CHECK(!evaluated.out.empty());

  // Clamped predictions stay inside the Likert range.
  const auto clamped = run_cli(
      "predict --model run/best --in dev.in.tsv --clamp", tmp.path());
  std::istringstream lines(clamped.out);
  std::string line;
  while (std::getline(lines, line)) {
    const double v = std::stod(line);
    CHECK(v >= 1.0);
    CHECK(v <= 5.0);
  }

  // Training in cross mode exercises the concatenated-sequence path.
  const auto cross = run_cli(
      "train --config config.json --train-in train.in.tsv "
      "--train-expected train.expected.tsv --dev-in dev.in.tsv "
      "--dev-expected dev.expected.tsv --mode cross --out run_cross",
      tmp.path());
  CHECK(cross.exit_code == 0);

  // --seed overrides the config seed and changes the run.
  const auto reseeded = run_cli(
      "train --config config.json --train-in train.in.tsv "
      "--train-expected train.expected.tsv --dev-in dev.in.tsv "
      "--dev-expected dev.expected.tsv --mode reference --seed 99 "
      "--out run_seed",
      tmp.path());
  CHECK(reseeded.exit_code == 0);
  CHECK(reseeded.out != trained.out);

  // Inputs whose layout lacks a field the model needs fail cleanly.
  write_text(tmp.file("hyponly.tsv"), "w1 w2 w3\n");
  const auto wrong_layout =
      run_cli("predict --model run/best --in hyponly.tsv", tmp.path());
  CHECK(wrong_layout.exit_code == 1);
  CHECK(wrong_layout.out.empty());
  CHECK(wrong_layout.err.find("source") != std::string::npos);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: qars_cli_tests <path-to-qars-binary>\n");
    return 1;
  }
  g_qars_bin = std::filesystem::absolute(argv[1]).string();
  doctest::Context context;
  context.applyCommandLine(argc - 1, argv + 1);
  return context.run();
}
