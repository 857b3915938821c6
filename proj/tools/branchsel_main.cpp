// branchsel: command-line front end.
//
//   branchsel gen-corpus --out data/ [--spec spec.json] [--seed N]
//   branchsel analyze data/train.jsonl [--out stats.json] [--text]
//   branchsel pretrain --data data/train.jsonl --out pre.ckpt
//   branchsel train-rl --data data/train.jsonl --from-checkpoint pre.ckpt --out rl.ckpt
//   branchsel train-baseline --order l2r --data data/train.jsonl --out l2r.ckpt
//   branchsel eval --data data/ --split test --from-checkpoint rl.ckpt --out metrics.json
//   branchsel decode --from-checkpoint rl.ckpt --src "first catch v03 as v12"

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "branchsel/checkpoint.hpp"
#include "branchsel/dataset.hpp"
#include "branchsel/error.hpp"
#include "branchsel/evaluation.hpp"
#include "branchsel/log.hpp"
#include "branchsel/synthetic.hpp"
#include "branchsel/training.hpp"

namespace fs = std::filesystem;
using namespace branchsel;

namespace {

struct Common {
  std::string grammar;
  std::string templates;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string from_checkpoint;
};

// Every ModelConfig / TrainConfig field, settable by a flag of the same name.
struct Overrides {
  std::optional<std::size_t> action_embed_dim, field_embed_dim, hidden_dim, selector_dim;
  std::optional<double> lambda_rl, eta, learning_rate, clip_norm;
  std::optional<std::size_t> pretrain_epochs, rl_epochs, batch_size;
  bool record_wall_time = false;

  void attach(CLI::App* app) {
    app->add_option("--action-embed-dim,--action_embed_dim", action_embed_dim);
    app->add_option("--field-embed-dim,--field_embed_dim", field_embed_dim);
    app->add_option("--hidden-dim,--hidden_dim", hidden_dim);
    app->add_option("--selector-dim,--selector_dim", selector_dim);
    app->add_option("--lambda,--lambda-rl,--lambda_rl", lambda_rl, "weight of the RL term");
    app->add_option("--eta", eta, "reward clipping threshold");
    app->add_option("--learning-rate,--learning_rate", learning_rate);
    app->add_option("--clip-norm,--clip_norm", clip_norm);
    app->add_option("--pretrain-epochs,--pretrain_epochs", pretrain_epochs);
    app->add_option("--rl-epochs,--rl_epochs", rl_epochs);
    app->add_option("--batch-size,--batch_size", batch_size);
    app->add_flag("--record-wall-time,--record_wall_time", record_wall_time);
  }

  void apply(ModelConfig& m, TrainConfig& t) const {
    if (action_embed_dim) m.action_embed_dim = *action_embed_dim;
    if (field_embed_dim) m.field_embed_dim = *field_embed_dim;
    if (hidden_dim) m.hidden_dim = *hidden_dim;
    if (selector_dim) m.selector_dim = *selector_dim;
    if (lambda_rl) t.lambda_rl = *lambda_rl;
    if (eta) t.eta = *eta;
    if (learning_rate) t.learning_rate = *learning_rate;
    if (clip_norm) t.clip_norm = *clip_norm;
    if (pretrain_epochs) t.pretrain_epochs = *pretrain_epochs;
    if (rl_epochs) t.rl_epochs = *rl_epochs;
    if (batch_size) t.batch_size = *batch_size;
    if (record_wall_time) t.record_wall_time = true;
  }
};

void add_common(CLI::App* app, Common& c, bool needs_data = true) {
  app->add_option("--grammar", c.grammar, "grammar file (default: grammar.asdl beside the data)");
  app->add_option("--templates", c.templates, "realization templates (default: templates.txt beside the data)");
  auto* d = app->add_option("--data", c.data, "dataset (JSON lines) or corpus directory");
  if (needs_data) d->required();
  app->add_option("--out", c.out, "output path");
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--config", c.config, "JSON file with \"model\" and \"train\" sections");
}

fs::path data_dir(const Common& c) {
  fs::path p(c.data);
  return fs::is_directory(p) ? p : p.parent_path();
}

fs::path split_path(const Common& c, const std::string& split) {
  fs::path p(c.data);
  if (fs::is_directory(p)) return p / (split + ".jsonl");
  return p;
}

struct Language {
  Grammar grammar;
  Templates templates;
};

Language load_language(const Common& c) {
  fs::path g = c.grammar.empty() ? data_dir(c) / "grammar.asdl" : fs::path(c.grammar);
  fs::path t = c.templates.empty() ? data_dir(c) / "templates.txt" : fs::path(c.templates);
  Language lang;
  lang.grammar = load_grammar_file(g);
  lang.templates = load_templates_file(t, lang.grammar);
  return lang;
}

void load_config_file(const Common& c, ModelConfig& m, TrainConfig& t) {
  if (c.config.empty()) return;
  auto j = nlohmann::json::parse(read_text_file(c.config));
  if (j.contains("model")) {
    // only the dimensions; vocabularies always come from the training split
    const auto& jm = j["model"];
    m.action_embed_dim = jm.value("action_embed_dim", m.action_embed_dim);
    m.field_embed_dim = jm.value("field_embed_dim", m.field_embed_dim);
    m.hidden_dim = jm.value("hidden_dim", m.hidden_dim);
    m.selector_dim = jm.value("selector_dim", m.selector_dim);
  }
  if (j.contains("train")) from_json(j["train"], t);
}

void require_out(const Common& c, const char* what) {
  if (c.out.empty()) throw Error(std::string("--out is required (") + what + ")");
}

std::string metrics_path(const Common& c, const std::string& explicit_path) {
  return explicit_path.empty() ? c.out + ".metrics.jsonl" : explicit_path;
}

void save_run(const Common& c, Model& model, Trainer& trainer, bool pretrained, std::size_t max_steps,
              const std::string& metrics) {
  CheckpointMeta meta{trainer.config(), trainer.rng_state(), trainer.epochs_done(), pretrained, max_steps};
  save_checkpoint(c.out, model, meta);
  write_text_file(metrics, trainer.log_jsonl());
  spdlog::info("wrote {} and {}", c.out, metrics);
}

enum class Mode { Pretrain, Baseline, RlFromScratch };

// Fresh model + trainer for a training command.
int run_fresh_training(const Common& c, const Overrides& ov, const std::string& metrics, Mode mode,
                       OrderPolicy policy) {
  require_out(c, "checkpoint path");
  Language lang = load_language(c);
  fs::path train_path = split_path(c, "train");
  Corpus train = load_corpus(train_path, lang.grammar, lang.templates);
  ModelConfig dims;
  TrainConfig tc;
  load_config_file(c, dims, tc);
  ov.apply(dims, tc);
  if (c.seed) tc.seed = *c.seed;
  // a pre-trained model decodes with the random policy it was trained under
  tc.order_policy = mode == Mode::Pretrain ? OrderPolicy::RAND : policy;
  tc.validate();
  ModelConfig mc = config_for_corpus(lang.grammar, train, load_corpus_meta(train_path), dims);
  Model model(lang.grammar, mc, tc.seed);
  Trainer trainer(model, tc);
  bool pretrained = mode == Mode::Pretrain;
  if (mode == Mode::RlFromScratch)
    trainer.train_rl(train, false, true);
  else if (mode == Mode::Pretrain)
    trainer.pretrain(train);
  else
    trainer.train_baseline(train, policy);
  save_run(c, model, trainer, pretrained, default_max_steps(train, lang.grammar), metrics);
  return 0;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grammar-based code generation with a learned branch-order selector"};
  app.require_subcommand(1);

  // gen-corpus
  Common gen;
  std::string spec_path;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "generate the order-sensitive synthetic corpus");
  gen_cmd->add_option("--spec", spec_path, "synthetic spec JSON (default: built-in spec)");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "overrides the spec seed");

  // analyze
  Common an;
  std::string analyze_file;
  bool analyze_text = false;
  auto* an_cmd = app.add_subcommand("analyze", "multi-branch statistics of a dataset");
  an_cmd->add_option("file", analyze_file, "dataset (JSON lines)");
  add_common(an_cmd, an, false);
  an_cmd->add_flag("--text", analyze_text, "print the aligned text report instead of JSON");

  // pretrain
  Common pre;
  Overrides pre_ov;
  std::string pre_metrics;
  auto* pre_cmd = app.add_subcommand("pretrain", "random-order pre-training");
  add_common(pre_cmd, pre);
  pre_ov.attach(pre_cmd);
  pre_cmd->add_option("--metrics", pre_metrics, "metric log (default: <out>.metrics.jsonl)");

  // train-rl
  Common rl;
  Overrides rl_ov;
  std::string rl_metrics;
  bool rl_scratch = false;
  auto* rl_cmd = app.add_subcommand("train-rl", "self-critical training of generator and branch selector");
  add_common(rl_cmd, rl);
  rl_ov.attach(rl_cmd);
  rl_cmd->add_option("--from-checkpoint", rl.from_checkpoint, "pre-trained checkpoint");
  rl_cmd->add_option("--metrics", rl_metrics, "metric log (default: <out>.metrics.jsonl)");
  rl_cmd->add_flag("--allow-from-scratch", rl_scratch, "train without pre-training (ablation)");

  // train-baseline
  Common base;
  Overrides base_ov;
  std::string base_metrics;
  std::string base_order;
  auto* base_cmd = app.add_subcommand("train-baseline", "MLE training with a fixed order policy");
  add_common(base_cmd, base);
  base_ov.attach(base_cmd);
  base_cmd->add_option("--order", base_order, "l2r, r2l or rand")->required();
  base_cmd->add_option("--metrics", base_metrics, "metric log (default: <out>.metrics.jsonl)");

  // eval
  Common ev;
  std::string ev_split = "test";
  std::size_t ev_beam = 5;
  std::string ev_compare;
  bool ev_text = false;
  auto* ev_cmd = app.add_subcommand("eval", "exact match, bucketed and child-node accuracy");
  add_common(ev_cmd, ev);
  ev_cmd->add_option("--from-checkpoint", ev.from_checkpoint, "trained checkpoint")->required();
  ev_cmd->add_option("--split", ev_split, "split name when --data is a directory");
  ev_cmd->add_option("--beam-size", ev_beam, "beam size");
  ev_cmd->add_option("--compare", ev_compare, "second checkpoint for the disagreement report");
  ev_cmd->add_flag("--text", ev_text, "also print aligned text reports");

  // decode
  Common de;
  std::string de_src;
  std::size_t de_beam = 5;
  auto* de_cmd = app.add_subcommand("decode", "decode sentences into code");
  add_common(de_cmd, de, false);
  de_cmd->add_option("--from-checkpoint", de.from_checkpoint, "trained checkpoint")->required();
  de_cmd->add_option("--src", de_src, "one sentence (otherwise: --data file, one per line)");
  de_cmd->add_option("--beam-size", de_beam, "beam size");

  CLI11_PARSE(app, argc, argv);

  try {
    configure_logging();

    if (*gen_cmd) {
      SyntheticSpec spec = default_synthetic_spec();
      if (!spec_path.empty()) spec = nlohmann::json::parse(read_text_file(spec_path)).get<SyntheticSpec>();
      if (gen.seed) spec.seed = *gen.seed;
      auto corpus = generate_order_sensitive_corpus(spec);
      write_synthetic_corpus(corpus, spec, gen.out);
      spdlog::info("wrote {} / {} / {} instances to {}", corpus.train.size(), corpus.dev.size(), corpus.test.size(),
                   gen.out);
      return 0;
    }

    if (*an_cmd) {
      if (analyze_file.empty()) analyze_file = an.data;
      if (analyze_file.empty()) throw Error("analyze needs a dataset file");
      an.data = analyze_file;
      Language lang = load_language(an);
      Corpus corpus = load_corpus(split_path(an, "train"), lang.grammar, lang.templates);
      CorpusStats stats = corpus_stats(corpus);
      std::string json = stats.to_json().dump(2) + "\n";
      if (!an.out.empty()) write_text_file(an.out, json);
      std::cout << (analyze_text ? stats.to_text() : json);
      return 0;
    }

    if (*pre_cmd) return run_fresh_training(pre, pre_ov, metrics_path(pre, pre_metrics), Mode::Pretrain, OrderPolicy::RAND);

    if (*base_cmd) {
      OrderPolicy p = parse_order_policy(base_order);
      if (p == OrderPolicy::RL) throw Error("train-baseline --order takes l2r, r2l or rand");
      return run_fresh_training(base, base_ov, metrics_path(base, base_metrics), Mode::Baseline, p);
    }

    if (*rl_cmd) {
      std::string metrics = metrics_path(rl, rl_metrics);
      if (rl.from_checkpoint.empty()) {
        if (!rl_scratch)
          throw Error("train-rl requires --from-checkpoint with a pre-trained model (see `branchsel pretrain`)");
        return run_fresh_training(rl, rl_ov, metrics, Mode::RlFromScratch, OrderPolicy::RL);
      }
      require_out(rl, "checkpoint path");
      Language lang = load_language(rl);
      fs::path train_path = split_path(rl, "train");
      Corpus train = load_corpus(train_path, lang.grammar, lang.templates);
      LoadedCheckpoint ck = load_checkpoint(rl.from_checkpoint);
      if (!ck.meta.pretrained) throw Error(rl.from_checkpoint + " is not a pre-trained checkpoint");
      ModelConfig dims;
      TrainConfig tc = ck.meta.train;
      load_config_file(rl, dims, tc);
      rl_ov.apply(dims, tc);
      tc.order_policy = OrderPolicy::RL;
      if (rl.seed) tc.seed = *rl.seed;
      tc.validate();
      Model model(lang.grammar, ck.model, std::move(ck.params));
      Trainer trainer(model, tc);
      trainer.set_epochs_done(ck.meta.epochs_done);
      if (!rl.seed) trainer.set_rng_state(ck.meta.rng_state);
      trainer.train_rl(train, true);
      save_run(rl, model, trainer, true, ck.meta.max_steps, metrics);
      return 0;
    }

    if (*ev_cmd) {
      Language lang = load_language(ev);
      Corpus corpus = load_corpus(split_path(ev, ev_split), lang.grammar, lang.templates);
      LoadedCheckpoint ck = load_checkpoint(ev.from_checkpoint);
      OrderPolicy policy = ck.meta.train.order_policy;
      std::uint64_t seed = ev.seed.value_or(ck.meta.train.seed);
      Model model(lang.grammar, ck.model, std::move(ck.params));
      DecodeOptions opt{ev_beam, ck.meta.max_steps, policy, seed};
      auto results = evaluate_corpus(model, corpus, lang.templates, opt);
      BucketAccuracy buckets = bucketed_accuracy(results);
      ChildAccuracy child = child_prediction_accuracy(model, corpus, policy, seed);
      nlohmann::json out = {{"split", ev_split},
                            {"instances", corpus.size()},
                            {"order_policy", std::string(to_string(policy))},
                            {"beam_size", ev_beam},
                            {"exact_match", buckets.accuracy},
                            {"bucketed_accuracy", buckets.to_json()},
                            {"child_prediction_accuracy", child.to_json()}};
      std::string text = bucket_table({{std::string(to_string(policy)), buckets}});
      if (!ev_compare.empty()) {
        LoadedCheckpoint other = load_checkpoint(ev_compare);
        OrderPolicy other_policy = other.meta.train.order_policy;
        Model other_model(lang.grammar, other.model, std::move(other.params));
        ChildAccuracy other_child = child_prediction_accuracy(other_model, corpus, other_policy, seed);
        Disagreement d = order_disagreement(child.node_flags, other_child.node_flags);
        std::string a = std::string(to_string(policy)), b = std::string(to_string(other_policy));
        if (a == b) b += " (compare)";
        out["disagreement"] = d.to_json();
        out["disagreement"]["model_a"] = a;
        out["disagreement"]["model_b"] = b;
        text += "\n" + disagreement_table(a, b, d);
      }
      std::string json = out.dump(2) + "\n";
      if (!ev.out.empty()) write_text_file(ev.out, json);
      std::cout << json;
      if (ev_text) std::cout << "\n" << text;
      return 0;
    }

    if (*de_cmd) {
      if (de.data.empty() && de_src.empty()) throw Error("decode needs --src or --data");
      if (de.data.empty() && (de.grammar.empty() || de.templates.empty()))
        throw Error("decode with --src needs --grammar and --templates");
      Language lang = load_language(de);
      LoadedCheckpoint ck = load_checkpoint(de.from_checkpoint);
      OrderPolicy policy = ck.meta.train.order_policy;
      Model model(lang.grammar, ck.model, std::move(ck.params));
      std::vector<std::vector<std::string>> inputs;
      if (!de_src.empty()) {
        inputs.push_back(split_words(de_src));
      } else {
        std::istringstream in(read_text_file(de.data));
        std::string line;
        while (std::getline(in, line))
          if (!split_words(line).empty()) inputs.push_back(split_words(line));
      }
      std::string out;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        DecodeOptions opt{de_beam, ck.meta.max_steps, policy, de.seed.value_or(ck.meta.train.seed) + i};
        DecodeResult r = beam_decode(model, inputs[i], opt);
        out += (r.ast ? ast_to_code(*r.ast, lang.grammar, lang.templates) : std::string("<decode failure>")) + "\n";
      }
      if (!de.out.empty()) write_text_file(de.out, out);
      std::cout << out;
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
