// psrd_cli: experiment runner.
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "psrd/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace psrd;

namespace {

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::string mode = "psrd";
  std::string tau_list;
  std::string params_path;
};

struct Run {
  ExperimentConfig cfg;
  std::string hash;
  fs::path out;

  json meta() const { return {{"config_hash", hash}, {"seed", cfg.seed}}; }

  std::string csv_preamble() const {
    return "# config_hash=" + hash + " seed=" + std::to_string(cfg.seed) + "\n";
  }

  fs::path file(const std::string& name) const { return out / name; }
};

Run prepare(const Options& o) {
  Run r;
  r.cfg = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (o.seed) r.cfg.seed = *o.seed;
  validate(r.cfg);
  r.hash = config_hash(r.cfg);
  r.out = o.out_dir;
  fs::create_directories(r.out);
  return r;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string jsonl(const Run& run, const std::vector<json>& records) {
  std::string s = json{{"meta", run.meta()}}.dump() + "\n";
  for (const auto& r : records) s += r.dump() + "\n";
  return s;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad number in list: '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("empty list");
  return out;
}

// Trained parameters: loaded from --params when given, otherwise trained
// from scratch with the configured pipeline.
RewardParams reward_params(const Experiment& ex, const Options& o) {
  if (o.params_path.empty()) return ex.train_from_scratch().params;
  std::ifstream in(o.params_path, std::ios::binary);
  if (!in) throw ValidationError("cannot open params file: " + o.params_path);
  auto loaded = read_params(in);
  const auto expect = ex.initial_params();
  if (loaded.params.image_proj.rows != expect.image_proj.rows || loaded.params.image_proj.cols != expect.image_proj.cols ||
      loaded.params.text_proj.cols != expect.text_proj.cols)
    throw ValidationError("params file shape does not match the config");
  return loaded.params;
}

json summary_json(const CorpusSummary& s) {
  return {{"chair_i", s.chair.chair_i},
          {"chair_s", s.chair.chair_s},
          {"cover", s.chair.cover},
          {"hal", s.chair.hal},
          {"mentions", s.chair.mentions},
          {"hallucinated_mentions", s.chair.hallucinated_mentions},
          {"r_acc", s.r_acc},
          {"mean_evals", s.mean_evals},
          {"mean_phases", s.mean_phases},
          {"intervened_fraction", s.intervened_fraction},
          {"accepted_fraction", s.accepted_fraction},
          {"captions", s.captions}};
}

// ------------------------------------------------------------------ commands

void cmd_gen_scenes(const Options& o) {
  auto run = prepare(o);
  Experiment ex(run.cfg);
  auto emit = [&](const std::string& name, const std::vector<SceneGraph>& scenes) {
    std::vector<json> recs;
    for (const auto& s : scenes) recs.push_back(to_json(s));
    write_file(run.file(name), jsonl(run, recs));
  };
  emit("scenes_train.jsonl", ex.train_scenes());
  emit("scenes_eval.jsonl", ex.eval_scenes());
}

void cmd_elicit(const Options& o) {
  auto run = prepare(o);
  Experiment ex(run.cfg);
  const auto scenes = ex.train_scenes();
  const auto captions = ex.elicit(scenes);
  std::vector<json> recs;
  for (const auto& c : captions)
    recs.push_back({{"scene_id", c.scene_id},
                    {"visual", c.noisy ? "noisy" : "clean"},
                    {"noise_sigma", c.noise_sigma},
                    {"prompt", c.prompt_mode == PromptMode::standard ? "standard" : "inducing"},
                    {"tokens", c.tokens},
                    {"text", ex.vocab().render(c.tokens)}});
  write_file(run.file("captions.jsonl"), jsonl(run, recs));

  const auto data = ex.build_dataset(captions, scenes);
  recs.clear();
  for (const auto& t : data.triplets) recs.push_back(to_json(t));
  write_file(run.file("triplets.jsonl"), jsonl(run, recs));
  recs.clear();
  for (const auto& p : data.pairs)
    recs.push_back({{"scene_id", p.scene_id_a}, {"a_tokens", p.a}, {"b_tokens", p.b}, {"w_a", p.w_a}, {"w_b", p.w_b}});
  write_file(run.file("negative_pairs.jsonl"), jsonl(run, recs));

  json rel = to_json(data.report);
  rel["meta"] = run.meta();
  rel["triplets"] = data.triplets.size();
  rel["negative_pairs"] = data.pairs.size();
  write_file(run.file("reliability.json"), rel.dump(2) + "\n");
}

void cmd_train_reward(const Options& o) {
  auto run = prepare(o);
  Experiment ex(run.cfg);
  const auto result = ex.train_from_scratch();
  std::ostringstream bin(std::ios::binary);
  write_params(bin, result.params, run.meta());
  write_file(run.file("reward_params.bin"), bin.str());

  std::string csv = run.csv_preamble() + "epoch,L_DA,L_Margin,L_HC,L_total\n";
  for (const auto& e : result.log)
    csv += std::to_string(e.epoch) + "," + num(e.loss.da) + "," + num(e.loss.margin) + "," + num(e.loss.hc) + "," +
           num(e.loss.total) + "\n";
  write_file(run.file("loss.csv"), csv);
}

// Held-out phrases from eval-scene captions, labeled by the grounding oracle.
std::vector<ScoredPhrase> held_out_phrases(const Experiment& ex) {
  const auto scenes = ex.eval_scenes();
  const auto captions = ex.elicit(scenes);
  std::map<int, const SceneGraph*> by_id;
  for (const auto& s : scenes) by_id[s.scene_id] = &s;
  std::vector<ScoredPhrase> out;
  for (const auto& c : captions) {
    const auto& scene = *by_id.at(c.scene_id);
    const auto emb = clean_features(scene, ex.vocab(), ex.dim());
    for (const auto& p : segment(c.tokens, ex.vocab())) {
      if (is_terminal_phase(p, ex.vocab())) continue;
      const bool grounded = grounding_oracle(scene, p.tokens, ex.vocab()).grounded;
      out.push_back({emb, p.tokens, grounded ? Label::grounded : Label::hallucinated});
    }
  }
  return out;
}

void cmd_eval_reward(const Options& o) {
  auto run = prepare(o);
  Experiment ex(run.cfg);
  const auto params = reward_params(ex, o);
  const auto samples = held_out_phrases(ex);
  const auto& a = run.cfg.analysis;
  auto report = [&](const RewardParams& p) {
    const auto r = evaluate_classifier(p, samples, a.tau_cls, a.overlap_bins);
    return json{{"accuracy", r.metrics.accuracy}, {"precision", r.metrics.precision}, {"recall", r.metrics.recall},
                {"f1", r.metrics.f1},             {"overlap_ratio", r.overlap},         {"count", r.metrics.count},
                {"grounded", r.grounded_scores.size()}, {"hallucinated", r.hallucinated_scores.size()}};
  };
  json out{{"meta", run.meta()},
           {"positive_class", "hallucinated"},
           {"tau_cls", a.tau_cls},
           {"overlap_bins", a.overlap_bins},
           {"trained", report(params)},
           {"untrained", report(ex.initial_params())}};
  write_file(run.file("reward_eval.json"), out.dump(2) + "\n");
}

void write_decode(const Run& run, const Experiment& ex, DecodeMode mode, const RewardParams& params) {
  const auto scenes = ex.eval_scenes();
  const auto outputs = ex.decode_corpus(scenes, params, ex.decode_settings(mode));
  std::vector<json> caps, traces;
  for (const auto& out : outputs) {
    caps.push_back({{"scene_id", out.trace.scene_id}, {"tokens", out.tokens}, {"text", ex.vocab().render(out.tokens)}});
    json phases = json::array();
    for (const auto& r : out.trace.phases) phases.push_back(to_json(r, ex.vocab()));
    traces.push_back({{"scene_id", out.trace.scene_id}, {"total_evals", out.trace.total_evals}, {"phases", phases}});
  }
  const std::string m = to_string(mode);
  write_file(run.file("captions_" + m + ".jsonl"), jsonl(run, caps));
  write_file(run.file("traces_" + m + ".jsonl"), jsonl(run, traces));
  json summary = summary_json(ex.summarize(outputs, scenes));
  summary["meta"] = run.meta();
  summary["mode"] = m;
  summary["tau"] = run.cfg.search.tau;
  write_file(run.file("summary_" + m + ".json"), summary.dump(2) + "\n");
}

void cmd_decode(const Options& o) {
  DecodeMode mode;
  try {
    mode = parse_decode_mode(o.mode);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  auto run = prepare(o);
  Experiment ex(run.cfg);
  write_decode(run, ex, mode, reward_params(ex, o));
}

void cmd_analyze_dynamics(const Options& o) {
  auto run = prepare(o);
  Experiment ex(run.cfg);
  const auto scenes = ex.eval_scenes();
  const auto dyn = ex.dynamics(scenes, run.cfg.analysis.dynamics_captions, run.cfg.decode.max_phases - 1);
  std::string word = run.csv_preamble() + "phase,bin,bin_low,bin_high,r_word\n";
  std::string sent = run.csv_preamble() + "phase,samples,r_sent\n";
  const int bins = run.cfg.analysis.position_bins;
  for (std::size_t k = 0; k < dyn.phase_rate.size(); ++k) {
    sent += std::to_string(k) + "," + std::to_string(dyn.samples[k]) + "," + num(dyn.phase_rate[k]) + "\n";
    for (int b = 0; b < bins; ++b)
      word += std::to_string(k) + "," + std::to_string(b) + "," + num(static_cast<double>(b) / bins) + "," +
              num(static_cast<double>(b + 1) / bins) + "," + num(dyn.word_rate[k][static_cast<std::size_t>(b)]) + "\n";
  }
  write_file(run.file("dynamics_word.csv"), word);
  write_file(run.file("dynamics_sent.csv"), sent);

  const auto seg = ex.compare_segmenters(scenes, run.cfg.analysis.dynamics_captions);
  json cmp{{"meta", run.meta()},
           {"captions", seg.captions},
           {"theta", seg.theta},
           {"delimiter_phases", seg.delimiter_phases},
           {"entropy_phases", seg.entropy_phases},
           {"ratio", seg.ratio()}};
  write_file(run.file("segmentation.json"), cmp.dump(2) + "\n");
}

void cmd_sweep_tau(const Options& o) {
  auto run = prepare(o);
  const auto taus = o.tau_list.empty() ? run.cfg.analysis.tau_list : parse_list(o.tau_list);
  Experiment ex(run.cfg);
  const auto params = reward_params(ex, o);
  const auto scenes = ex.eval_scenes();
  std::string csv = run.csv_preamble() + "tau,chair_i,chair_s,cover,r_acc,mean_evals,intervened_fraction\n";
  for (double tau : taus) {
    const auto s = ex.summarize(ex.decode_corpus(scenes, params, ex.decode_settings(DecodeMode::psrd, tau)), scenes);
    csv += num(tau) + "," + num(s.chair.chair_i) + "," + num(s.chair.chair_s) + "," + num(s.chair.cover) + "," +
           num(s.r_acc) + "," + num(s.mean_evals) + "," + num(s.intervened_fraction) + "\n";
  }
  write_file(run.file("sweep_tau.csv"), csv);
}

// Fixed-strength contrastive decoding (k = 0) at each alpha: mean phase
// reward and the clean-generator negative log-probability of the emitted
// tokens.
void cmd_sweep_alpha(const Options& o) {
  auto run = prepare(o);
  Experiment ex(run.cfg);
  const auto params = reward_params(ex, o);
  const auto scenes = ex.eval_scenes();
  const auto settings = ex.decode_settings(DecodeMode::psrd);
  const auto& vocab = ex.vocab();
  std::string csv = run.csv_preamble() + "alpha,mean_reward,clean_nll,chair_i,cover\n";
  for (double alpha : run.cfg.analysis.alpha_list) {
    if (alpha < 0) throw ValidationError("alpha_list entries must be non-negative");
    double reward_sum = 0.0, nll_sum = 0.0;
    std::size_t phases = 0, tokens = 0;
    std::vector<AnnotatedCaption> annotated;
    for (const auto& scene : scenes) {
      const auto env = DecodeEnvironment::make(ex.generator(), params, scene, ex.dim(), settings.seed);
      TokenSeq committed;
      for (std::size_t k = 0; k < settings.max_phases; ++k) {
        PhaseEvaluator ev(env, settings, committed, {}, k);
        const auto phase = ev.generate(0, alpha);
        auto ctx = ex.generator().make_context(env.clean, PromptMode::standard, 0);
        ctx.prefix = committed;
        nll_sum += ex.generator().clean_nll(ctx, phase) * static_cast<double>(phase.size());
        tokens += phase.size();
        committed.insert(committed.end(), phase.begin(), phase.end());
        if (phase.size() == 1 && phase[0] == vocab.eos()) break;
        reward_sum += ev.score(phase);
        ++phases;
      }
      annotated.push_back(annotate(scene, committed, vocab));
    }
    const auto chair = chair_scores(annotated, scenes, vocab);
    csv += num(alpha) + "," + num(phases ? reward_sum / static_cast<double>(phases) : 0.0) + "," +
           num(tokens ? nll_sum / static_cast<double>(tokens) : 0.0) + "," + num(chair.chair_i) + "," +
           num(chair.cover) + "\n";
  }
  write_file(run.file("sweep_alpha.csv"), csv);
}

void cmd_report(const Options& o) {
  auto run = prepare(o);
  Experiment ex(run.cfg);
  const auto train_scenes = ex.train_scenes();
  const auto captions = ex.elicit(train_scenes);
  const auto data = ex.build_dataset(captions, train_scenes);
  RewardParams params;
  json training;
  if (o.params_path.empty()) {
    const auto result = ex.train_reward(data);
    params = result.params;
    training = {{"initial_total", result.log.front().loss.total}, {"final_total", result.log.back().loss.total},
                {"epochs", result.log.size() - 1}};
  } else {
    params = reward_params(ex, o);
  }
  const auto scenes = ex.eval_scenes();
  const auto& a = run.cfg.analysis;
  const auto cls = evaluate_classifier(params, held_out_phrases(ex), a.tau_cls, a.overlap_bins);

  json modes = json::object();
  std::string csv = run.csv_preamble() + "mode,chair_i,chair_s,cover,hal,r_acc,mean_evals\n";
  for (auto mode : {DecodeMode::baseline, DecodeMode::psrd, DecodeMode::delayed}) {
    const auto s = ex.summarize(ex.decode_corpus(scenes, params, ex.decode_settings(mode)), scenes);
    modes[to_string(mode)] = summary_json(s);
    csv += std::string(to_string(mode)) + "," + num(s.chair.chair_i) + "," + num(s.chair.chair_s) + "," +
           num(s.chair.cover) + "," + num(s.chair.hal) + "," + num(s.r_acc) + "," + num(s.mean_evals) + "\n";
  }
  json out{{"meta", run.meta()},
           {"config", to_json(run.cfg)},
           {"reliability", to_json(data.report)},
           {"triplets", data.triplets.size()},
           {"negative_pairs", data.pairs.size()},
           {"training", training},
           {"reward_eval",
            {{"accuracy", cls.metrics.accuracy}, {"precision", cls.metrics.precision}, {"recall", cls.metrics.recall},
             {"f1", cls.metrics.f1}, {"overlap_ratio", cls.overlap}, {"positive_class", "hallucinated"}}},
           {"decode", modes}};
  write_file(run.file("report.json"), out.dump(2) + "\n");
  write_file(run.file("report.csv"), csv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phase-wise self-reward decoding experiments"};
  app.require_subcommand(1);
  Options opts;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out_dir, "output directory");
    sub->add_option("--seed", opts.seed, "override the config seed");
    return sub;
  };
  auto add_params = [&](CLI::App* sub) {
    sub->add_option("--params", opts.params_path, "trained reward params; trained from scratch when omitted");
    return sub;
  };

  std::map<CLI::App*, void (*)(const Options&)> handlers;
  handlers[add_common(app.add_subcommand("gen-scenes", "emit train and eval scene corpora"))] = cmd_gen_scenes;
  handlers[add_common(app.add_subcommand("elicit", "elicit captions, weak labels and triplets"))] = cmd_elicit;
  handlers[add_common(app.add_subcommand("train-reward", "train the reward model"))] = cmd_train_reward;
  handlers[add_params(add_common(app.add_subcommand("eval-reward", "classification metrics of the reward model")))] =
      cmd_eval_reward;
  auto* decode_cmd = add_params(add_common(app.add_subcommand("decode", "decode the eval scenes")));
  decode_cmd->add_option("--mode", opts.mode, "baseline | psrd | delayed");
  handlers[decode_cmd] = cmd_decode;
  handlers[add_common(app.add_subcommand("analyze-dynamics", "positional hallucination rates"))] = cmd_analyze_dynamics;
  auto* sweep_cmd = add_params(add_common(app.add_subcommand("sweep-tau", "CHAIR and evaluator calls per tau")));
  sweep_cmd->add_option("--tau-list", opts.tau_list, "comma-separated tau values");
  handlers[sweep_cmd] = cmd_sweep_tau;
  handlers[add_params(add_common(app.add_subcommand("sweep-alpha", "reward and fluency proxy per alpha")))] =
      cmd_sweep_alpha;
  handlers[add_params(add_common(app.add_subcommand("report", "aggregate report")))] = cmd_report;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    for (auto* sub : app.get_subcommands()) handlers.at(sub)(opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
