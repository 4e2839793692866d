#include "nlens/report.hpp"

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

namespace nlens {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

Json token_list(const std::vector<TokenProb>& list, const Tokenizer* tok) {
  Json out = Json::array();
  for (const auto& t : list) {
    Json e = {{"token", t.token}, {"prob", t.prob}};
    if (tok) e["text"] = tok->token_text(t.token);
    out.push_back(std::move(e));
  }
  return out;
}

std::string joined_tokens(const std::vector<TokenProb>& list, const Tokenizer* tok, size_t n) {
  std::string out;
  for (size_t i = 0; i < std::min(n, list.size()); ++i) {
    if (i) out += ' ';
    out += tok ? tok->token_text(list[i].token) : std::to_string(list[i].token);
  }
  return out;
}

NeuronRole source_from(const Json& j) { return parse_role(j.get<std::string>()); }

template <typename T>
T field(const Json& j, const char* key) {
  if (!j.contains(key)) throw InputError(std::string("edit plan: missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("edit plan: bad field '") + key + "': " + e.what());
  }
}

}  // namespace

Json to_json(const ProjectionReport& p, const Tokenizer* tokenizer) {
  return {{"top", token_list(p.top, tokenizer)}, {"last", token_list(p.last, tokenizer)}};
}

Json to_json(const NeuronReport& r, const Tokenizer* tokenizer) {
  Json j = {{"neuron", to_string(r.id)}, {"label", label(r.id)}, {"role", to_string(r.role)}};
  if (r.role == NeuronRole::kFfnQuery) {
    j["query_score"] = r.query_score;
  } else {
    j["importance"] = r.importance;
  }
  j["coefficient"] = r.coefficient;
  j["dominant_position"] = r.dominant_position;
  j["start_share"] = r.start_share;
  j["projection"] = to_json(r.projection, tokenizer);
  return j;
}

Json to_json(const CategoryMetrics& m) {
  return {{"category", m.category},
          {"n_pairs", m.n_pairs},
          {"mean_abs_entropy_diff", m.mean_abs_entropy_diff},
          {"signed_mean_entropy_diff", m.signed_mean_entropy_diff},
          {"proportion_male_lower", m.proportion_male_lower}};
}

Json to_json(const BiasMetrics& m) {
  Json cats = Json::array();
  for (const auto& c : m.per_category) cats.push_back(to_json(c));
  return {{"schema", kReportSchemaVersion},
          {"overall", to_json(m.overall)},
          {"per_category", cats},
          {"n_excluded", m.n_excluded}};
}

Json to_json(const StereoMetrics& m) {
  return {{"schema", kReportSchemaVersion}, {"lms", m.lms},         {"ss", m.ss},
          {"icat", m.icat},                 {"n_cases", m.n_cases}, {"n_excluded", m.n_excluded}};
}

Json to_json(const AccuracyResult& r) {
  return {{"schema", kReportSchemaVersion},
          {"accuracy", r.accuracy},
          {"n_cases", r.n_cases},
          {"correct", r.correct},
          {"ties", r.ties}};
}

Json to_json(const HeadGrid& g, size_t top_n) {
  Json rows = Json::array();
  for (int l = 0; l < g.n_layers; ++l) {
    Json row = Json::array();
    for (int h = 0; h < g.n_heads; ++h) row.push_back(g.at(l, h));
    rows.push_back(std::move(row));
  }
  Json top = Json::array();
  for (const auto& [l, h] : g.top(top_n)) top.push_back({{"layer", l}, {"head", h}, {"score", g.at(l, h)}});
  return {{"schema", kReportSchemaVersion},
          {"n_layers", g.n_layers},
          {"n_heads", g.n_heads},
          {"scores", rows},
          {"top", top}};
}

Json to_json(const IneParams& p) {
  return {{"n_per_role", p.n_per_role},
          {"budget", p.budget},
          {"capability_drop_threshold", p.capability_drop_threshold},
          {"bias_sample_size", p.bias_sample_size},
          {"min_bias_reduction", p.min_bias_reduction},
          {"seed", p.seed}};
}

Json to_json(const EditPlan& plan) {
  Json cands = Json::array();
  for (const auto& c : plan.candidates) {
    cands.push_back({{"neuron", to_string(c.id)},
                     {"source", to_string(c.source)},
                     {"importance", c.importance},
                     {"dominant_position", c.dominant_position},
                     {"start_share", c.start_share},
                     {"evaluated", c.evaluated},
                     {"bias_delta", c.bias_delta},
                     {"capability_delta", c.capability_delta},
                     {"filtered", c.filtered},
                     {"reason", c.reason},
                     {"selected", c.selected},
                     {"rank", c.rank}});
  }
  Json neurons = Json::array();
  for (const auto& id : plan.neurons) neurons.push_back(to_string(id));
  return {{"version", plan.version},
          {"model_hash", plan.model_hash},
          {"params", to_json(plan.params)},
          {"baseline_bias", plan.baseline_bias},
          {"baseline_accuracy", plan.baseline_accuracy},
          {"neurons", neurons},
          {"candidates", cands}};
}

EditPlan edit_plan_from_json(const Json& j) {
  if (!j.is_object()) throw InputError("edit plan: expected a JSON object");
  EditPlan plan;
  plan.version = field<int>(j, "version");
  plan.model_hash = j.value("model_hash", std::string{});
  if (j.contains("params")) {
    const Json& p = j.at("params");
    plan.params.n_per_role = field<size_t>(p, "n_per_role");
    plan.params.budget = field<size_t>(p, "budget");
    plan.params.capability_drop_threshold = field<double>(p, "capability_drop_threshold");
    plan.params.bias_sample_size = field<size_t>(p, "bias_sample_size");
    plan.params.min_bias_reduction = field<double>(p, "min_bias_reduction");
    plan.params.seed = field<uint64_t>(p, "seed");
  }
  plan.baseline_bias = j.value("baseline_bias", 0.0);
  plan.baseline_accuracy = j.value("baseline_accuracy", 0.0);
  for (const auto& n : field<Json>(j, "neurons")) plan.neurons.push_back(parse_neuron_id(n.get<std::string>()));
  if (j.contains("candidates")) {
    for (const auto& cj : j.at("candidates")) {
      Candidate c;
      c.id = parse_neuron_id(field<std::string>(cj, "neuron"));
      c.source = source_from(cj.at("source"));
      c.importance = field<double>(cj, "importance");
      c.dominant_position = field<int>(cj, "dominant_position");
      c.start_share = field<double>(cj, "start_share");
      c.evaluated = field<bool>(cj, "evaluated");
      c.bias_delta = field<double>(cj, "bias_delta");
      c.capability_delta = field<double>(cj, "capability_delta");
      c.filtered = field<bool>(cj, "filtered");
      c.reason = field<std::string>(cj, "reason");
      c.selected = field<bool>(cj, "selected");
      c.rank = field<int>(cj, "rank");
      plan.candidates.push_back(std::move(c));
    }
  }
  plan.validate();
  return plan;
}

EditPlan load_edit_plan(const std::filesystem::path& path) { return edit_plan_from_json(read_json(path)); }

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string bias_csv(const BiasMetrics& m) {
  std::string out = "category,n_pairs,mean_abs_entropy_diff,signed_mean_entropy_diff,proportion_male_lower\n";
  for (const auto& c : m.per_category) {
    out += csv_field(c.category) + ',' + std::to_string(c.n_pairs) + ',' + format_number(c.mean_abs_entropy_diff) +
           ',' + format_number(c.signed_mean_entropy_diff) + ',' + format_number(c.proportion_male_lower) + '\n';
  }
  return out;
}

std::string pair_scores_csv(const std::vector<PairedCase>& pairs, const BiasMetrics& m) {
  std::string out = "index,category,word,male_entropy,female_entropy,ok\n";
  for (size_t i = 0; i < pairs.size() && i < m.pairs.size(); ++i) {
    const auto& s = m.pairs[i];
    out += std::to_string(i) + ',' + csv_field(pairs[i].category) + ',' + csv_field(pairs[i].word) + ',' +
           (s.ok ? format_number(s.male) : "") + ',' + (s.ok ? format_number(s.female) : "") + ',' +
           (s.ok ? "1" : "0") + '\n';
  }
  return out;
}

std::string neurons_csv(const std::vector<NeuronReport>& rows, const Tokenizer* tokenizer) {
  std::string out = "role,neuron,label,score,coefficient,dominant_position,start_share,top_tokens,last_tokens\n";
  for (const auto& r : rows) {
    const double score = r.role == NeuronRole::kFfnQuery ? r.query_score : r.importance;
    out += to_string(r.role) + ',' + to_string(r.id) + ',' + csv_field(label(r.id)) + ',' + format_number(score) +
           ',' + format_number(r.coefficient) + ',' + std::to_string(r.dominant_position) + ',' +
           format_number(r.start_share) + ',' + csv_field(joined_tokens(r.projection.top, tokenizer, 10)) + ',' +
           csv_field(joined_tokens(r.projection.last, tokenizer, 10)) + '\n';
  }
  return out;
}

std::string head_grid_csv(const HeadGrid& g) {
  std::string out = "layer,head,score\n";
  for (int l = 0; l < g.n_layers; ++l) {
    for (int h = 0; h < g.n_heads; ++h)
      out += std::to_string(l) + ',' + std::to_string(h) + ',' + format_number(g.at(l, h)) + '\n';
  }
  return out;
}

std::string cna_csv(const std::vector<CnaRow>& rows, const Tokenizer* tokenizer) {
  std::string out = "neuron,label,coef_before,coef_after,top_tokens\n";
  for (const auto& r : rows) {
    out += to_string(r.neuron) + ',' + csv_field(label(r.neuron)) + ',' + format_number(r.coef_before) + ',' +
           format_number(r.coef_after) + ',' + csv_field(joined_tokens(r.projection.top, tokenizer, 10)) + '\n';
  }
  return out;
}

std::string frequency_csv(const std::vector<std::pair<int, double>>& curve) {
  std::string out = "k,fraction\n";
  for (const auto& [k, f] : curve) out += std::to_string(k) + ',' + format_number(f) + '\n';
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// Token text can be a partial UTF-8 sequence; such bytes become U+FFFD.
void write_json(const std::filesystem::path& path, const Json& j) {
  write_text(path, j.dump(2, ' ', false, Json::error_handler_t::replace) + "\n");
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

std::string manifest_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(env, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Json to_json(const RunManifest& m) {
  Json datasets = Json::object();
  for (const auto& [path, hash] : m.dataset_hashes) datasets[path] = hash;
  return {{"schema", kReportSchemaVersion},
          {"command", m.command},
          {"config", m.config_path},
          {"model_hash", m.model_hash},
          {"datasets", datasets},
          {"seed", m.seed},
          {"timestamp", m.timestamp},
          {"outputs", m.outputs},
          {"extra", m.extra}};
}

}  // namespace nlens
