// nlens: bias localization and neuron editing for small decoder-only models.
//
// Every subcommand writes its outputs plus a manifest.json into --out-dir.
// Exit status: 0 success, 2 invalid input, 3 runtime failure.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <set>

#include "CLI11.hpp"
#include "nlens/attribution.hpp"
#include "nlens/datasets.hpp"
#include "nlens/editing.hpp"
#include "nlens/metrics.hpp"
#include "nlens/parallel.hpp"
#include "nlens/report.hpp"

namespace fs = std::filesystem;
using namespace nlens;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string model;
  std::string config;
  std::string tokenizer;
  std::string dataset;
  std::string out_dir = ".";
  uint64_t seed = 0;
  int threads = 0;
  size_t sample = 0;
};

struct Loaded {
  TransformerWeights weights;
  Tokenizer tokenizer;
};

Loaded load_model(const Common& c) {
  if (c.config.empty() || c.model.empty() || c.tokenizer.empty())
    throw InputError("--config, --model and --tokenizer are required");
  const ModelConfig cfg = load_config(c.config);
  Loaded out{load_weights(c.model, cfg), Tokenizer::load_dir(c.tokenizer, cfg.bos_token_id)};
  if (out.tokenizer.vocab_size() > cfg.vocab_size)
    throw InputError("tokenizer has " + std::to_string(out.tokenizer.vocab_size()) + " tokens but the model only " +
                     std::to_string(cfg.vocab_size));
  return out;
}

// Seeded subsample keeping original order; n = 0 keeps everything.
template <typename T>
std::vector<T> subsample(const std::vector<T>& items, size_t n, uint64_t seed) {
  if (n == 0 || n >= items.size()) return items;
  std::vector<size_t> idx(items.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (size_t i = idx.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<size_t> pick(0, i);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<T> out;
  for (size_t i : idx) out.push_back(items[i]);
  return out;
}

class Run {
 public:
  Run(std::string command, const Common& c) : c_(c) {
    m_.command = std::move(command);
    m_.config_path = c.config;
    m_.seed = c.seed;
    m_.timestamp = manifest_timestamp();
    fs::create_directories(c.out_dir);
  }

  fs::path out(const std::string& name) {
    m_.outputs.push_back(name);
    return fs::path(c_.out_dir) / name;
  }
  void dataset(const std::string& path) { m_.dataset_hashes[path] = file_hash(path); }
  void model(const TransformerWeights& w) { m_.model_hash = weights_hash(w); }
  Json& extra() { return m_.extra; }

  void finish() {
    m_.outputs.push_back("manifest.json");
    write_json(fs::path(c_.out_dir) / "manifest.json", to_json(m_));
  }

 private:
  const Common& c_;
  RunManifest m_;
};

std::vector<NeuronId> parse_ids(const std::vector<std::string>& texts) {
  std::vector<NeuronId> out;
  for (const auto& t : texts) out.push_back(parse_neuron_id(t));
  return out;
}

void add_model_opts(CLI::App* app, Common& c) {
  app->add_option("--model", c.model, "weight container (.safetensors)");
  app->add_option("--config", c.config, "model config JSON");
  app->add_option("--tokenizer", c.tokenizer, "directory with vocab.json and merges.txt");
}

void add_common_opts(CLI::App* app, Common& c) {
  app->add_option("--out-dir", c.out_dir, "output directory")->capture_default_str();
  app->add_option("--seed", c.seed, "random seed")->capture_default_str();
  app->add_option("--threads", c.threads, "worker threads, 0 = all cores")->capture_default_str();
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw InputError(std::string(flag) + " is required");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Locate and edit the neurons behind gender-biased predictions."};
  app.require_subcommand(1);
  app.footer(
      "Dataset schemas (JSON lines, version 1):\n"
      "  pairs   {\"male\",\"female\",\"male_alt\"?,\"female_alt\"?,\"category\",\"word\",\"variant\",\n"
      "           \"male_term\",\"female_term\"}\n"
      "  stereo  {\"stereotype\",\"anti_stereotype\",\"nonsensical\",\"domain\"?}\n"
      "  tasks   {\"kind\":\"mcq\",\"prompt\",\"choices\",\"answer_index\"} |\n"
      "          {\"kind\":\"arithmetic\",\"prompt\",\"answer\"}\n"
      "Neuron ids: ffn:<layer>:<index> or attn:<layer>:<head>:<index>.\n"
      "Exit status: 0 ok, 2 invalid input, 3 runtime failure.");

  Common c;

  // init
  auto* init = app.add_subcommand("init", "write a random model (and optional word tokenizer)");
  std::string words_file;
  init->add_option("--config", c.config, "model config JSON")->required();
  init->add_option("--words", words_file, "one word per line; builds a tokenizer with each word as one token");
  add_common_opts(init, c);

  // gen-commonwords
  auto* gen_cw = app.add_subcommand("gen-commonwords", "render the CommonWords pairs from word lists");
  std::string wordlist_dir, male_term = "man", female_term = "woman";
  gen_cw->add_option("--wordlists", wordlist_dir, "directory of <category>.txt files")->required();
  gen_cw->add_option("--male", male_term)->capture_default_str();
  gen_cw->add_option("--female", female_term)->capture_default_str();
  add_common_opts(gen_cw, c);

  // gen-arithmetic
  auto* gen_ar = app.add_subcommand("gen-arithmetic", "write an arithmetic probe");
  size_t n_problems = 100;
  int digits = 2;
  gen_ar->add_option("-n,--count", n_problems)->capture_default_str();
  gen_ar->add_option("--digits", digits)->capture_default_str();
  add_common_opts(gen_ar, c);

  // evaluations
  auto* eval_bias = app.add_subcommand("eval-bias", "entropy-difference bias metrics on paired sentences");
  auto* eval_stereo = app.add_subcommand("eval-stereo", "LMS / SS / ICAT on stereotype triples");
  auto* eval_tasks = app.add_subcommand("eval-tasks", "accuracy on an mcq / arithmetic probe");
  for (auto* sub : {eval_bias, eval_stereo, eval_tasks}) {
    add_model_opts(sub, c);
    sub->add_option("--dataset", c.dataset, "JSON lines dataset")->required();
    sub->add_option("--sample", c.sample, "evaluate a seeded subsample of N cases");
    add_common_opts(sub, c);
  }

  // heads
  auto* heads = app.add_subcommand("heads", "score every attention head");
  std::string method = "both";
  size_t top_heads = 20;
  add_model_opts(heads, c);
  heads->add_option("--dataset", c.dataset, "paired sentences")->required();
  heads->add_option("--method", method)->check(CLI::IsMember({"logit", "causal", "both"}))->capture_default_str();
  heads->add_option("--top", top_heads)->capture_default_str();
  heads->add_option("--sample", c.sample);
  add_common_opts(heads, c);

  // neurons
  auto* neurons = app.add_subcommand("neurons", "value and query neurons for a prompt or a pair dataset");
  std::string prompt, target;
  size_t n_neurons = 50;
  std::vector<int> freq_ks;
  int freq_m = 300;
  add_model_opts(neurons, c);
  neurons->add_option("--prompt", prompt);
  neurons->add_option("--target", target, "target word (its first token is used)");
  neurons->add_option("--dataset", c.dataset, "paired sentences; aggregates over them");
  neurons->add_option("-n,--top", n_neurons)->capture_default_str();
  neurons->add_option("--frequency", freq_ks, "K values for the frequency curve (dataset mode)");
  auto* freq_m_opt = neurons->add_option("--frequency-m", freq_m, "per-case top M; defaults to min(300, neurons)")
                         ->capture_default_str();
  neurons->add_option("--sample", c.sample);
  add_common_opts(neurons, c);

  // ine
  auto* ine = app.add_subcommand("ine", "select neurons to edit");
  std::string probe_path;
  IneParams params;
  add_model_opts(ine, c);
  ine->add_option("--dataset", c.dataset, "CommonWords pairs")->required();
  ine->add_option("--probe", probe_path, "capability probe tasks")->required();
  ine->add_option("--n-per-role", params.n_per_role)->capture_default_str();
  ine->add_option("--budget", params.budget)->capture_default_str();
  ine->add_option("--max-drop", params.capability_drop_threshold, "tolerated probe accuracy drop, points")
      ->capture_default_str();
  ine->add_option("--bias-sample", params.bias_sample_size)->capture_default_str();
  ine->add_option("--min-reduction", params.min_bias_reduction)->capture_default_str();
  ine->add_option("--sample", c.sample, "subsample the pairs used for identification");
  add_common_opts(ine, c);

  // apply
  auto* apply = app.add_subcommand("apply", "mask the neurons of an edit plan");
  std::string plan_path;
  add_model_opts(apply, c);
  apply->add_option("--plan", plan_path)->required();
  add_common_opts(apply, c);

  // cna
  auto* cna = app.add_subcommand("cna", "coefficients before and after masking");
  std::vector<std::string> mask_texts, watch_texts;
  add_model_opts(cna, c);
  cna->add_option("--plan", plan_path, "mask the plan's neurons");
  cna->add_option("--mask", mask_texts, "neuron ids to mask");
  cna->add_option("--prompt", prompt)->required();
  cna->add_option("--watch", watch_texts, "neuron ids to report")->required();
  add_common_opts(cna, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    set_thread_count(c.threads);
    const fs::path out_dir = c.out_dir;

    if (init->parsed()) {
      Run run("init", c);
      ModelConfig cfg = load_config(c.config);
      if (!words_file.empty()) {
        run.dataset(words_file);
        const auto tok = Tokenizer::from_words(load_wordlist(words_file));
        cfg.vocab_size = tok.vocab_size();
        cfg.bos_token_id = tok.bos_id();
        tok.save_dir(run.out("tokenizer"));
      }
      cfg.validate();
      const auto w = random_model(cfg, c.seed);
      run.model(w);
      save_config(cfg, run.out("config.json"));
      export_weights(w, run.out("model.safetensors"));
      run.finish();
    } else if (gen_cw->parsed()) {
      Run run("gen-commonwords", c);
      const auto words = load_wordlists(wordlist_dir);
      for (const auto& [cat, _] : words) run.dataset((fs::path(wordlist_dir) / (to_string(cat) + ".txt")).string());
      write_pairs(run.out("commonwords.jsonl"), generate_commonwords(words, {male_term, female_term}));
      run.finish();
    } else if (gen_ar->parsed()) {
      Run run("gen-arithmetic", c);
      write_tasks(run.out("arithmetic.jsonl"), generate_arithmetic(n_problems, c.seed, digits));
      run.finish();
    } else if (eval_bias->parsed()) {
      Run run("eval-bias", c);
      const auto m = load_model(c);
      run.model(m.weights);
      run.dataset(c.dataset);
      const auto pairs = subsample(read_pairs(c.dataset), c.sample, c.seed);
      const auto metrics = entropy_difference_eval(m.weights, m.tokenizer, pairs);
      write_json(run.out("bias.json"), to_json(metrics));
      write_text(run.out("bias.csv"), bias_csv(metrics));
      write_text(run.out("pairs.csv"), pair_scores_csv(pairs, metrics));
      run.finish();
    } else if (eval_stereo->parsed()) {
      Run run("eval-stereo", c);
      const auto m = load_model(c);
      run.model(m.weights);
      run.dataset(c.dataset);
      const auto cases = subsample(read_stereo(c.dataset), c.sample, c.seed);
      write_json(run.out("stereo.json"), to_json(stereoset_eval(m.weights, m.tokenizer, cases)));
      run.finish();
    } else if (eval_tasks->parsed()) {
      Run run("eval-tasks", c);
      const auto m = load_model(c);
      run.model(m.weights);
      run.dataset(c.dataset);
      const auto cases = subsample(read_tasks(c.dataset), c.sample, c.seed);
      write_json(run.out("tasks.json"), to_json(task_accuracy(m.weights, m.tokenizer, cases)));
      run.finish();
    } else if (heads->parsed()) {
      Run run("heads", c);
      const auto m = load_model(c);
      run.model(m.weights);
      run.dataset(c.dataset);
      const auto pairs = subsample(read_pairs(c.dataset), c.sample, c.seed);
      Json summary = {{"schema", kReportSchemaVersion}};
      std::vector<std::vector<std::pair<int, int>>> tops;
      if (method == "logit" || method == "both") {
        const auto cases = analysis_cases(m.weights, m.tokenizer, pairs);
        if (cases.empty()) throw InputError("no pair yields an analysis case");
        const auto grid = head_logit_grid(m.weights, m.tokenizer, cases);
        write_text(run.out("heads_logit.csv"), head_grid_csv(grid));
        summary["logit"] = to_json(grid, top_heads);
        tops.push_back(grid.top(top_heads));
      }
      if (method == "causal" || method == "both") {
        const auto grid = head_causal_grid(m.weights, m.tokenizer, pairs);
        write_text(run.out("heads_causal.csv"), head_grid_csv(grid));
        summary["causal"] = to_json(grid, top_heads);
        tops.push_back(grid.top(top_heads));
      }
      if (tops.size() == 2) {
        const std::set<std::pair<int, int>> causal(tops[1].begin(), tops[1].end());
        Json shared = Json::array();
        for (const auto& cell : tops[0]) {
          if (causal.contains(cell)) shared.push_back({{"layer", cell.first}, {"head", cell.second}});
        }
        summary["intersection"] = shared;
      }
      write_json(run.out("heads.json"), summary);
      run.finish();
    } else if (neurons->parsed()) {
      Run run("neurons", c);
      if (n_neurons == 0) throw InputError("--top must be >= 1");
      const auto m = load_model(c);
      run.model(m.weights);
      std::vector<NeuronReport> rows;
      Json report = {{"schema", kReportSchemaVersion}};
      if (!prompt.empty() || !target.empty()) {
        require(target, "--target");
        if (!c.dataset.empty()) throw InputError("give either --prompt/--target or --dataset");
        const auto trace = forward(m.weights, m.tokenizer.encode(prompt));
        const TokenId t = m.tokenizer.first_token(target);
        const auto value = top_value_neurons(m.weights, trace, t, n_neurons);
        std::vector<NeuronId> attn_ids;
        for (const auto& r : value.attn) attn_ids.push_back(r.id);
        const auto query = query_neuron_scores(m.weights, trace, attn_ids, n_neurons);
        for (const auto* list : {&value.ffn, &value.attn, &query}) rows.insert(rows.end(), list->begin(), list->end());
        report["prompt"] = prompt;
        report["target"] = {{"token", t}, {"text", m.tokenizer.token_text(t)}};
      } else {
        require(c.dataset, "--dataset (or --prompt/--target)");
        run.dataset(c.dataset);
        const auto pairs = subsample(read_pairs(c.dataset), c.sample, c.seed);
        const auto cases = analysis_cases(m.weights, m.tokenizer, pairs);
        if (cases.empty()) throw InputError("no pair yields an analysis case");
        const auto agg = aggregate_importance(m.weights, m.tokenizer, cases, n_neurons);
        for (const auto* list : {&agg.ffn_value, &agg.attn_value, &agg.ffn_query})
          rows.insert(rows.end(), list->begin(), list->end());
        report["n_cases"] = cases.size();
        if (!freq_ks.empty()) {
          const int total = static_cast<int>(all_neurons(m.weights.config).size());
          if (freq_m_opt->count() == 0) freq_m = std::min(freq_m, total);
          report["frequency_m"] = freq_m;
          const auto curve = neuron_frequency(m.weights, m.tokenizer, cases, freq_ks, freq_m);
          write_text(run.out("frequency.csv"), frequency_csv(curve));
        }
      }
      Json list = Json::array();
      for (const auto& r : rows) list.push_back(to_json(r, &m.tokenizer));
      report["neurons"] = list;
      write_json(run.out("neurons.json"), report);
      write_text(run.out("neurons.csv"), neurons_csv(rows, &m.tokenizer));
      run.finish();
    } else if (ine->parsed()) {
      Run run("ine", c);
      params.seed = c.seed;
      const auto m = load_model(c);
      run.model(m.weights);
      run.dataset(c.dataset);
      run.dataset(probe_path);
      const auto pairs = subsample(read_pairs(c.dataset), c.sample, c.seed);
      const auto plan = ine_select(m.weights, m.tokenizer, pairs, read_tasks(probe_path), params);
      write_json(run.out("plan.json"), to_json(plan));
      run.extra()["selected"] = plan.neurons.size();
      run.finish();
    } else if (apply->parsed()) {
      Run run("apply", c);
      const auto m = load_model(c);
      run.model(m.weights);
      run.dataset(plan_path);
      const auto plan = load_edit_plan(plan_path);
      const auto edited = apply_plan(m.weights, plan);
      export_weights(edited, run.out("model.safetensors"));
      Json masked = Json::array();
      for (const auto& id : plan.neurons) masked.push_back(to_string(id));
      write_json(run.out("provenance.json"), {{"schema", kReportSchemaVersion},
                                              {"source_model_hash", weights_hash(m.weights)},
                                              {"edited_model_hash", weights_hash(edited)},
                                              {"plan", plan_path},
                                              {"plan_hash", file_hash(plan_path)},
                                              {"masked", masked}});
      run.finish();
    } else if (cna->parsed()) {
      Run run("cna", c);
      const auto m = load_model(c);
      run.model(m.weights);
      std::vector<NeuronId> mask_ids = parse_ids(mask_texts);
      if (!plan_path.empty()) {
        run.dataset(plan_path);
        const auto plan = load_edit_plan(plan_path);
        mask_ids.insert(mask_ids.end(), plan.neurons.begin(), plan.neurons.end());
      }
      const auto watch = parse_ids(watch_texts);
      const auto rows = cna_compare(m.weights, mask_ids, m.tokenizer.encode(prompt), watch);
      write_text(run.out("cna.csv"), cna_csv(rows, &m.tokenizer));
      run.finish();
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
