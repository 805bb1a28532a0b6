// qars -- machine translation quality assessment toolkit.
//
// Exit codes: 0 success, 1 runtime/data error (message on stderr), 2 usage
// error. stdout carries only machine-readable results.
#include <cstdio>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qars/bertscore.hpp"
#include "qars/data.hpp"
#include "qars/encoder.hpp"
#include "qars/estimator.hpp"
#include "qars/eval.hpp"
#include "qars/lexical.hpp"
#include "qars/trainer.hpp"

namespace {

using namespace qars;

std::vector<double> read_numbers(const std::filesystem::path& path) {
  std::vector<double> values;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      std::size_t used = 0;
      const double v = std::stod(lines[i], &used);
      if (used != lines[i].size()) throw std::invalid_argument("trailing");
      values.push_back(v);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": line " + std::to_string(i + 1) +
                        ": unparsable number '" + lines[i] + "'");
    }
  }
  return values;
}

void check_likert_lines(const std::filesystem::path& path) {
  const auto values = read_numbers(path);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 1.0 && values[i] <= 5.0)) {
      throw ValueError(path.string() + ": line " + std::to_string(i + 1) +
                       ": score outside the Likert range [1, 5]");
    }
  }
}

void write_all_lines(const std::filesystem::path& path,
                     const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& line : lines) out << line << '\n';
}

// ---- score ----

struct ScoreArgs {
  std::string metric;
  std::string hyp_path, ref_path;
  std::string hyp_emb, ref_emb;
  std::string model_dir;
  std::string per_segment;
  std::string component = "f1";
  std::size_t max_n_bleu = 4;
  std::size_t max_n_chrf = 6;
  double beta = 2.0;
};

int run_score(const ScoreArgs& args) {
  std::vector<std::string> per_segment_lines;
  double corpus_score = 0.0;

  if (args.metric == "bleu" || args.metric == "chrf") {
    if (args.hyp_path.empty() || args.ref_path.empty()) {
      throw ValueError("score: --hyp and --ref are required for " +
                       args.metric);
    }
    const auto hyp_lines = read_lines(args.hyp_path);
    const auto ref_lines = read_lines(args.ref_path);
    if (hyp_lines.size() != ref_lines.size()) {
      throw ValueError("score: " + std::to_string(hyp_lines.size()) +
                       " hypothesis lines vs " +
                       std::to_string(ref_lines.size()) + " reference lines");
    }
    if (hyp_lines.empty()) throw ValueError("score: empty corpus");
    if (args.metric == "bleu") {
      std::vector<text::TokenSeq> hyps, refs;
      hyps.reserve(hyp_lines.size());
      refs.reserve(ref_lines.size());
      for (const auto& line : hyp_lines) hyps.push_back(text::tokenize_ws(line));
      for (const auto& line : ref_lines) refs.push_back(text::tokenize_ws(line));
      corpus_score = bleu(hyps, refs, args.max_n_bleu).value;
      if (!args.per_segment.empty()) {
        for (std::size_t i = 0; i < hyps.size(); ++i) {
          const double s = bleu({hyps[i]}, {refs[i]}, args.max_n_bleu).value;
          per_segment_lines.push_back(std::to_string(i) + '\t' +
                                      fmt::format("{:.4f}", s));
        }
      }
    } else {
      // Corpus chrF is the macro average of sentence scores.
      double total = 0.0;
      for (std::size_t i = 0; i < hyp_lines.size(); ++i) {
        const double s =
            chrf(hyp_lines[i], ref_lines[i], args.max_n_chrf, args.beta).value;
        total += s;
        if (!args.per_segment.empty()) {
          per_segment_lines.push_back(std::to_string(i) + '\t' +
                                      fmt::format("{:.4f}", s));
        }
      }
      corpus_score = total / static_cast<double>(hyp_lines.size());
    }
  } else if (args.metric == "bertscore") {
    std::vector<SegmentEmbeddings<float>> hyps, refs;
    if (!args.hyp_emb.empty() && !args.ref_emb.empty()) {
      hyps = load_precomputed<float>(args.hyp_emb);
      if (hyps.empty()) throw ValueError("score: no segments in " + args.hyp_emb);
      refs = load_precomputed<float>(args.ref_emb, hyps.front().tokens.dim(1));
    } else if (!args.model_dir.empty()) {
      if (args.hyp_path.empty() || args.ref_path.empty()) {
        throw ValueError("score: --hyp and --ref are required with --model");
      }
      const auto model = load_estimator(args.model_dir);
      NoGradGuard no_grad;
      for (const auto& line : read_lines(args.hyp_path)) {
        hyps.push_back(model.encoder().encode(model.segment_ids(line)));
      }
      for (const auto& line : read_lines(args.ref_path)) {
        refs.push_back(model.encoder().encode(model.segment_ids(line)));
      }
    } else {
      // Never silently trains an encoder: embeddings must come from files
      // or an existing model directory.
      throw ValueError(
          "score: bertscore needs --hyp-emb/--ref-emb or --model");
    }
    const auto results = bertscore_corpus(hyps, refs);
    if (results.empty()) throw ValueError("score: empty corpus");
    double total = 0.0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      const double s = args.component == "precision" ? r.precision
                       : args.component == "recall"  ? r.recall
                                                     : r.f1;
      total += s;
      if (!args.per_segment.empty()) {
        per_segment_lines.push_back(
            std::to_string(i) + '\t' + fmt::format("{:.4f}", r.precision) +
            '\t' + fmt::format("{:.4f}", r.recall) + '\t' +
            fmt::format("{:.4f}", r.f1));
      }
    }
    corpus_score = total / static_cast<double>(results.size());
  } else {
    throw ValueError("score: unknown metric '" + args.metric + "'");
  }

  if (!args.per_segment.empty()) {
    write_all_lines(args.per_segment, per_segment_lines);
  }
  std::cout << fmt::format("{:.4f}", corpus_score) << '\n';
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string config_path;
  std::string train_in, train_expected;
  std::string dev_in, dev_expected;
  std::string mode = "reference";
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
};

std::vector<QERecord> load_for_mode(const std::filesystem::path& in_path,
                                    const std::filesystem::path& expected_path,
                                    EstimatorMode mode) {
  const Layout layout = detect_layout(in_path);
  const auto records = load_dataset(in_path, expected_path, layout);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].source &&
        (mode == EstimatorMode::reference ||
         mode == EstimatorMode::reference_free || mode == EstimatorMode::cross)) {
      throw ValueError(in_path.string() + ": record " + std::to_string(i + 1) +
                       " has no source segment, required by " +
                       mode_name(mode) + " mode");
    }
    if (mode == EstimatorMode::reference && !records[i].reference) {
      throw ValueError(in_path.string() + ": record " + std::to_string(i + 1) +
                       " has no reference, required by reference mode");
    }
  }
  return records;
}

int run_train(const TrainArgs& args) {
  TrainConfig config = TrainConfig::from_json_file(args.config_path);
  if (args.seed_override) config.seed = *args.seed_override;
  const EstimatorMode mode = mode_from_string(args.mode);

  const auto train_set = load_for_mode(args.train_in, args.train_expected, mode);
  const auto dev_set = load_for_mode(args.dev_in, args.dev_expected, mode);

  // Vocabulary from every training-side segment the mode will read.
  std::vector<text::TokenSeq> corpus;
  for (const auto& record : train_set) {
    corpus.push_back(text::tokenize_ws(record.hypothesis));
    if (record.source) corpus.push_back(text::tokenize_ws(*record.source));
    if (mode == EstimatorMode::reference && record.reference) {
      corpus.push_back(text::tokenize_ws(*record.reference));
    }
  }
  auto vocab = text::Vocab::build(corpus, config.vocab_min_freq);

  EncoderConfig encoder_config = config.encoder;
  encoder_config.vocab_size = vocab.size();
  EncoderModel<float> encoder(encoder_config);
  Rng init_rng(config.seed, /*stream=*/17);
  encoder.init(init_rng);
  RegressorHead<float> head(feature_width(mode, encoder_config.dim),
                            config.hidden_units.first,
                            config.hidden_units.second);
  head.init(init_rng);
  EstimatorModel<float> model(std::move(encoder), std::move(vocab),
                              std::move(head), mode);

  TrainHooks hooks;
  hooks.after_epoch = [](std::size_t epoch, const EpochStats& stats) {
    std::cout << epoch << '\t' << fmt::format("{:.6f}", stats.train_mse)
              << '\t' << fmt::format("{:.6f}", stats.dev_pearson) << '\n';
  };
  const TrainReport report =
      train(model, config, train_set, dev_set, args.out_dir, &hooks);
  std::cerr << "best epoch " << report.best_epoch << " (dev pearson "
            << fmt::format("{:.4f}",
                           report.epochs[report.best_epoch - 1].dev_pearson)
            << "), checkpoint at " << report.best_checkpoint.string() << '\n';
  return 0;
}

// ---- predict ----

struct PredictArgs {
  std::string model_dir;
  std::string in_path;
  bool clamp = false;
};

int run_predict(const PredictArgs& args) {
  const auto model = load_estimator(args.model_dir);
  const Layout layout = detect_layout(args.in_path);
  const auto inputs = load_inputs(args.in_path, layout);
  for (const auto& input : inputs) {
    const double raw = model.predict(input);
    std::cout << fmt::format("{:.6f}", display_score(raw, args.clamp)) << '\n';
  }
  return 0;
}

// ---- evaluate ----

int run_evaluate(const std::string& pred_path, const std::string& gold_path) {
  const auto pred = read_numbers(pred_path);
  const auto gold = read_numbers(gold_path);
  const double r = pearson(pred, gold);
  std::cout << fmt::format("{:.2f}", r * 100.0) << '\n';
  return 0;
}

// ---- stats ----

int run_stats(const std::string& in_path, const std::string& expected_path,
              const std::string& layout_name_str) {
  const Layout layout = layout_from_string(layout_name_str);
  const auto records = load_dataset(in_path, expected_path, layout);
  const DatasetStats stats = dataset_stats(records);
  std::cout << "segments: " << stats.segments << '\n';
  if (stats.avg_source_tokens) {
    std::cout << "avg_source_tokens: "
              << fmt::format("{:.2f}", *stats.avg_source_tokens) << '\n';
  }
  std::cout << "avg_hyp_tokens: " << fmt::format("{:.2f}", stats.avg_hyp_tokens)
            << '\n';
  std::cout << "min_score: " << fmt::format("{:.2f}", stats.min_score) << '\n';
  std::cout << "avg_score: " << fmt::format("{:.2f}", stats.avg_score) << '\n';
  return 0;
}

// ---- split ----

struct SplitArgs {
  std::string in_path, expected_path;
  std::uint64_t seed = 1;
  std::size_t dev_size = 100;
  std::string out_prefix = "split";
};

int run_split(const SplitArgs& args) {
  // Line-based so the original bytes survive the round trip untouched.
  const auto in_lines = read_lines(args.in_path);
  const auto expected_lines = read_lines(args.expected_path);
  if (in_lines.size() != expected_lines.size()) {
    throw FormatError("split: line-count mismatch, " + args.in_path + " has " +
                      std::to_string(in_lines.size()) + ", " +
                      args.expected_path + " has " +
                      std::to_string(expected_lines.size()));
  }
  check_likert_lines(args.expected_path);
  const auto dev_indices =
      sample_dev_indices(in_lines.size(), args.seed, args.dev_size);
  std::vector<std::string> train_in, train_expected, dev_in, dev_expected;
  std::size_t next_dev = 0;
  for (std::size_t i = 0; i < in_lines.size(); ++i) {
    if (next_dev < dev_indices.size() && dev_indices[next_dev] == i) {
      dev_in.push_back(in_lines[i]);
      dev_expected.push_back(expected_lines[i]);
      ++next_dev;
    } else {
      train_in.push_back(in_lines[i]);
      train_expected.push_back(expected_lines[i]);
    }
  }
  write_all_lines(args.out_prefix + ".train.in.tsv", train_in);
  write_all_lines(args.out_prefix + ".train.expected.tsv", train_expected);
  write_all_lines(args.out_prefix + ".dev.in.tsv", dev_in);
  write_all_lines(args.out_prefix + ".dev.expected.tsv", dev_expected);
  std::cout << train_in.size() << '\t' << dev_in.size() << '\n';
  return 0;
}

// ---- merge-bt ----

struct MergeArgs {
  std::string blind_in, blind_expected;
  std::string bt_src;
  std::string nonblind_in, nonblind_expected;
  std::string out_prefix;
};

int run_merge_bt(const MergeArgs& args) {
  const auto blind =
      load_dataset(args.blind_in, args.blind_expected, Layout::blind);
  const auto nonblind =
      load_dataset(args.nonblind_in, args.nonblind_expected, Layout::nonblind);
  const auto merged =
      merge_backtranslation(blind, std::filesystem::path(args.bt_src), nonblind);
  write_dataset(merged, args.out_prefix + ".in.tsv",
                args.out_prefix + ".expected.tsv", Layout::reference_free);
  std::cout << merged.size() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qars -- machine translation quality assessment toolkit"};
  app.require_subcommand(1);

  int threads = threads_from_env();
  app.add_option("--threads", threads,
                 "worker threads for per-segment scoring and kernels "
                 "(QARS_THREADS is the fallback; results never depend on it)");

  ScoreArgs score_args;
  auto* score_cmd = app.add_subcommand("score", "score hypotheses against references");
  score_cmd->add_option("--metric", score_args.metric, "bleu | chrf | bertscore")
      ->required()
      ->check(CLI::IsMember({"bleu", "chrf", "bertscore"}));
  score_cmd->add_option("--hyp", score_args.hyp_path, "hypothesis text, one segment per line");
  score_cmd->add_option("--ref", score_args.ref_path, "reference text, one segment per line");
  score_cmd->add_option("--hyp-emb", score_args.hyp_emb, "QEEMB embeddings for the hypotheses");
  score_cmd->add_option("--ref-emb", score_args.ref_emb, "QEEMB embeddings for the references");
  score_cmd->add_option("--model", score_args.model_dir, "estimator directory whose encoder embeds the text");
  score_cmd->add_option("--per-segment", score_args.per_segment, "write a per-segment TSV here");
  score_cmd->add_option("--component", score_args.component, "bertscore value: precision | recall | f1")
      ->check(CLI::IsMember({"precision", "recall", "f1"}));
  score_cmd->add_option("--max-n", score_args.max_n_bleu, "BLEU n-gram order (default 4)");
  score_cmd->add_option("--chrf-max-n", score_args.max_n_chrf, "chrF n-gram order (default 6)");
  score_cmd->add_option("--beta", score_args.beta, "chrF recall weight (default 2)");

  TrainArgs train_args;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "train a quality estimator");
  train_cmd->add_option("--config", train_args.config_path, "TrainConfig JSON")->required();
  train_cmd->add_option("--train-in", train_args.train_in)->required();
  train_cmd->add_option("--train-expected", train_args.train_expected)->required();
  train_cmd->add_option("--dev-in", train_args.dev_in)->required();
  train_cmd->add_option("--dev-expected", train_args.dev_expected)->required();
  train_cmd->add_option("--mode", train_args.mode, "reference | reference-free | cross")
      ->required()
      ->check(CLI::IsMember({"reference", "reference-free", "cross"}));
  train_cmd->add_option("--out", train_args.out_dir, "output directory")->required();
  auto* train_seed_opt = train_cmd->add_option(
      "--seed", train_seed, "override the config seed");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "one prediction per input line");
  predict_cmd->add_option("--model", predict_args.model_dir)->required();
  predict_cmd->add_option("--in", predict_args.in_path)->required();
  predict_cmd->add_flag("--clamp", predict_args.clamp, "clamp displayed scores to [1, 5]");

  std::string eval_pred, eval_gold;
  auto* eval_cmd = app.add_subcommand("evaluate", "Pearson r (x100) of predictions vs gold");
  eval_cmd->add_option("--pred", eval_pred)->required();
  eval_cmd->add_option("--gold", eval_gold)->required();

  std::string stats_in, stats_expected, stats_layout;
  auto* stats_cmd = app.add_subcommand("stats", "dataset statistics");
  stats_cmd->add_option("--in", stats_in)->required();
  stats_cmd->add_option("--expected", stats_expected)->required();
  stats_cmd->add_option("--layout", stats_layout, "nonblind | blind")
      ->required()
      ->check(CLI::IsMember({"nonblind", "blind"}));

  SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("split", "seeded train/dev split");
  split_cmd->add_option("--in", split_args.in_path)->required();
  split_cmd->add_option("--expected", split_args.expected_path)->required();
  split_cmd->add_option("--seed", split_args.seed, "split seed (default 1)");
  split_cmd->add_option("--dev-size", split_args.dev_size, "dev segment count (default 100)");
  split_cmd->add_option("--out-prefix", split_args.out_prefix, "output file prefix (default 'split')");

  MergeArgs merge_args;
  auto* merge_cmd = app.add_subcommand("merge-bt", "merge back-translated blind data with nonblind data");
  merge_cmd->add_option("--blind-in", merge_args.blind_in)->required();
  merge_cmd->add_option("--blind-expected", merge_args.blind_expected)->required();
  merge_cmd->add_option("--bt-src", merge_args.bt_src)->required();
  merge_cmd->add_option("--nonblind-in", merge_args.nonblind_in)->required();
  merge_cmd->add_option("--nonblind-expected", merge_args.nonblind_expected)->required();
  merge_cmd->add_option("--out-prefix", merge_args.out_prefix)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  set_thread_count(threads);
  if (train_seed_opt->count() > 0) train_args.seed_override = train_seed;

  try {
    if (app.got_subcommand(score_cmd)) return run_score(score_args);
    if (app.got_subcommand(train_cmd)) return run_train(train_args);
    if (app.got_subcommand(predict_cmd)) return run_predict(predict_args);
    if (app.got_subcommand(eval_cmd)) return run_evaluate(eval_pred, eval_gold);
    if (app.got_subcommand(stats_cmd)) {
      return run_stats(stats_in, stats_expected, stats_layout);
    }
    if (app.got_subcommand(split_cmd)) return run_split(split_args);
    if (app.got_subcommand(merge_cmd)) return run_merge_bt(merge_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
