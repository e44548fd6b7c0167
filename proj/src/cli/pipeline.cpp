// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/cli/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "distileak/modelzoo/train.hpp"
#include "distileak/numerics/random.hpp"

namespace distileak::cli {

namespace fs = std::filesystem;
namespace nx = distileak::numerics;
namespace pt = boost::property_tree;
using nlohmann::json;

namespace {

constexpr Stage kOrder[] = {Stage::kData, Stage::kCorpus, Stage::kAia,  Stage::kDistill,
                            Stage::kLocal, Stage::kMia,   Stage::kMiv, Stage::kTheorem};

// Reads typed values from one INI section and remembers which keys were used.
class Section {
 public:
  Section(const pt::ptree* node, std::string name) : node_(node), name_(std::move(name)) {}

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!node_) return fallback;
    auto child = node_->get_child_optional(pt::ptree::path_type(key, '\0'));
    if (!child) return fallback;
    try {
      return child->get_value<T>();
    } catch (const pt::ptree_bad_data&) {
      throw ConfigError("[" + name_ + "] " + key + ": cannot parse '" + child->data() + "'");
    }
  }

  std::vector<std::string> list(const std::string& key, const std::vector<std::string>& fallback) {
    const std::string raw = get<std::string>(key, "");
    if (raw.empty()) return fallback;
    std::vector<std::string> parts;
    boost::split(parts, raw, boost::is_any_of(","));
    for (auto& p : parts) boost::trim(p);
    std::erase_if(parts, [](const std::string& p) { return p.empty(); });
    return parts;
  }

  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) {
    if (!node_ || !node_->get_child_optional(pt::ptree::path_type(key, '\0'))) {
      used_.insert(key);
      return fallback;
    }
    std::vector<double> out;
    for (const std::string& p : list(key, {})) {
      try {
        std::size_t pos = 0;
        out.push_back(std::stod(p, &pos));
        if (pos != p.size()) throw std::invalid_argument(p);
      } catch (const std::exception&) {
        throw ConfigError("[" + name_ + "] " + key + ": not a number '" + p + "'");
      }
    }
    return out;
  }

  void reject_unknown() const {
    if (!node_) return;
    for (const auto& [key, _] : *node_) {
      if (!used_.count(key)) throw ConfigError("[" + name_ + "] unknown key '" + key + "'");
    }
  }

 private:
  const pt::ptree* node_;
  std::string name_;
  std::set<std::string> used_;
};

template <class F>
auto wrap(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

modelzoo::ArchId arch_of(const std::string& where, const std::string& name) {
  return wrap(where, [&] { return modelzoo::parse_arch(name); });
}

distiller::Algorithm algorithm_of(const std::string& where, const std::string& name) {
  return wrap(where, [&] { return distiller::parse_algorithm(name); });
}

modelzoo::Activation activation_of(const std::string& where, const std::string& name) {
  const std::string n = boost::to_lower_copy(name);
  if (n == "relu") return modelzoo::Activation::kRelu;
  if (n == "tanh") return modelzoo::Activation::kTanh;
  throw ConfigError(where + ": unknown activation '" + name + "'");
}

std::string_view activation_name(modelzoo::Activation a) { return a == modelzoo::Activation::kTanh ? "tanh" : "relu"; }

nx::OptimizerKind optimizer_of(const std::string& where, const std::string& name) {
  const std::string n = boost::to_lower_copy(name);
  if (n == "sgd") return nx::OptimizerKind::kSgd;
  if (n == "adam") return nx::OptimizerKind::kAdam;
  throw ConfigError(where + ": unknown optimizer '" + name + "'");
}

void parse_distill_template(Section& s, distiller::DistillConfig& d) {
  d.ipc = s.get("ipc", d.ipc);
  d.outer_iterations = s.get("outer_iterations", d.outer_iterations);
  d.unroll_steps = s.get("unroll_steps", d.unroll_steps);
  d.data_optimizer.learning_rate = s.get("data_lr", d.data_optimizer.learning_rate);
  d.model_lr = s.get("model_lr", d.model_lr);
  d.init_group = s.get("init_group", d.init_group);
  d.real_batch = s.get("real_batch", d.real_batch);
  d.tm_expert_span = s.get("tm_expert_span", d.tm_expert_span);
  d.tm_student_steps = s.get("tm_student_steps", d.tm_student_steps);
  d.tm_experts = s.get("tm_experts", d.tm_experts);
  d.tm_expert_epochs = s.get("tm_expert_epochs", d.tm_expert_epochs);
  d.tm_expert_training.epochs = d.tm_expert_epochs;
}

std::string fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::vector<Stage> ordered(const std::vector<Stage>& stages) {
  std::vector<Stage> out;
  for (Stage s : kOrder) {
    if (std::find(stages.begin(), stages.end(), s) != stages.end()) out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------- persistence

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("missing " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_scores(const fs::path& path, std::span<const double> members, std::span<const double> nonmembers) {
  std::ofstream os(path);
  os << std::setprecision(17) << "score,member\n";
  for (double s : members) os << s << ",1\n";
  for (double s : nonmembers) os << s << ",0\n";
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

std::pair<std::vector<double>, std::vector<double>> read_scores(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<double> members, nonmembers;
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("malformed score row in " + path.string());
    const double s = std::stod(line.substr(0, comma));
    (line.substr(comma + 1) == "1" ? members : nonmembers).push_back(s);
  }
  return {members, nonmembers};
}

struct LocalArtifacts {
  modelzoo::ModelState model;
  std::vector<nx::Tensor> checkpoints;
  double learning_rate = 0.0;
};

LocalArtifacts load_local(const fs::path& out) {
  const json meta = json::parse(read_text(out / "local" / "model.json"));
  const dataforge::LabDataset real = dataforge::load_dataset(out / "data" / "real.bin");
  LocalArtifacts a;
  const auto arch = static_cast<modelzoo::ArchId>(meta.at("arch_index").get<std::uint32_t>());
  a.model.spec = modelzoo::make_spec(arch, real.dims, real.classes);
  a.checkpoints = trajlab::load_checkpoints(out / "local" / "checkpoints");
  if (a.checkpoints.empty()) throw std::runtime_error("local model has no checkpoints");
  a.model.weights = a.checkpoints.back();
  a.learning_rate = meta.at("learning_rate").get<double>();
  return a;
}

// ---------------------------------------------------------------- stages

json stage_data(const PipelineConfig& c, const fs::path& dir, std::uint64_t seed) {
  dataforge::GenerateConfig gen = c.data.generate;
  gen.seed = nx::derive_seed(seed, "generate");
  dataforge::SplitPlan plan = c.data.split;
  plan.seed = nx::derive_seed(seed, "split");
  const dataforge::Split sp = dataforge::split(dataforge::generate(gen), plan);
  dataforge::save_dataset(sp.real, dir / "real.bin");
  dataforge::save_dataset(sp.aux, dir / "aux.bin");
  dataforge::save_dataset(sp.eval_members, dir / "eval_members.bin");
  dataforge::save_dataset(sp.eval_nonmembers, dir / "eval_nonmembers.bin");
  return {{"real", sp.real.size()},
          {"aux", sp.aux.size()},
          {"eval_members", sp.eval_members.size()},
          {"eval_nonmembers", sp.eval_nonmembers.size()}};
}

json stage_distill(const PipelineConfig& c, const fs::path& dir, std::uint64_t seed) {
  const fs::path out = dir.parent_path();
  const dataforge::LabDataset real = dataforge::load_dataset(out / "data" / "real.bin");
  distiller::DistillConfig cfg = c.distill.config;
  cfg.seed = seed;
  const auto spec = modelzoo::make_spec(c.distill.arch, real.dims, real.classes);
  const distiller::SyntheticSet syn = distiller::distill(real, spec, cfg);
  distiller::save_synthetic(syn, dir / "syn.bin");
  return {{"algorithm", distiller::algorithm_name(syn.algorithm)},
          {"arch", modelzoo::arch_name(syn.arch)},
          {"rows", syn.data.size()},
          {"objective_first", syn.objective.empty() ? 0.0 : syn.objective.front()},
          {"objective_last", syn.objective.empty() ? 0.0 : syn.objective.back()}};
}

json stage_local(const PipelineConfig& c, const fs::path& dir, std::uint64_t seed) {
  const fs::path out = dir.parent_path();
  const distiller::SyntheticSet syn = distiller::load_synthetic(out / "distill" / "syn.bin");
  trajlab::RecordConfig rc = c.local.record;
  rc.keep_checkpoints = true;
  const trajlab::TrajectoryRecord rec = trajlab::train_and_record(syn, rc, seed);
  const auto spec = modelzoo::make_spec(syn.arch, syn.data.dims, syn.data.classes);
  trajlab::save_checkpoints(rec, spec, dir / "checkpoints");
  write_text(dir / "model.json", json{{"arch", modelzoo::arch_name(syn.arch)},
                                      {"arch_index", static_cast<std::uint32_t>(syn.arch)},
                                      {"learning_rate", rc.optimizer.learning_rate},
                                      {"epochs", rc.epochs}}
                                     .dump(2) + "\n");
  const modelzoo::ModelState h{.spec = spec, .weights = rec.checkpoints.back(), .seed = seed};
  const auto members = dataforge::load_dataset(out / "data" / "eval_members.bin");
  const auto nonmembers = dataforge::load_dataset(out / "data" / "eval_nonmembers.bin");
  return {{"final_loss", rec.losses.back()},
          {"accuracy_synthetic", modelzoo::accuracy(h, syn.data.samples, syn.data.labels)},
          {"accuracy_members", modelzoo::accuracy(h, members.samples, members.labels)},
          {"accuracy_nonmembers", modelzoo::accuracy(h, nonmembers.samples, nonmembers.labels)}};
}

json stage_corpus(const PipelineConfig& c, const fs::path& dir, std::uint64_t seed) {
  const fs::path out = dir.parent_path();
  const dataforge::LabDataset aux = dataforge::load_dataset(out / "data" / "aux.bin");
  trajlab::CorpusConfig cfg = c.corpus.config;
  cfg.seed = seed;
  const trajlab::TrajectoryCorpus corpus = trajlab::build_corpus(aux, c.corpus.algorithms, c.corpus.archs, cfg);
  trajlab::save_corpus(corpus, dir / "corpus.bin");
  const trajlab::Separability sep = trajlab::separability(corpus);
  return {{"records", corpus.records.size()},
          {"cells", corpus.cells()},
          {"epochs", corpus.epochs},
          {"separability_between", sep.between},
          {"separability_within", sep.within}};
}

json stage_aia(const PipelineConfig& c, const fs::path& dir, std::uint64_t seed) {
  const trajlab::TrajectoryCorpus corpus = trajlab::load_corpus(dir.parent_path() / "corpus" / "corpus.bin");
  aia::AiaConfig cfg = c.aia.config;
  cfg.seed = nx::derive_seed(seed, "attack");
  const aia::AiaModel model = aia::train_aia(corpus, cfg);
  const double chance = 1.0 / double(corpus.cells());
  json m{{"top1", aia::evaluate_aia(model, corpus, corpus.test)},
         {"validation_top1", model.validation_accuracy},
         {"chance", chance},
         {"test_records", corpus.test.size()}};
  if (c.aia.permutation_null) {
    const trajlab::TrajectoryCorpus null = aia::permute_labels(corpus, nx::derive_seed(seed, "permute"));
    cfg.seed = nx::derive_seed(seed, "null-attack");
    const aia::AiaModel null_model = aia::train_aia(null, cfg);
    m["null_top1"] = aia::evaluate_aia(null_model, null, null.test);
    m["null_sigma"] = std::sqrt(chance * (1 - chance) / double(null.test.size()));
  }
  return m;
}

json stage_mia(const PipelineConfig& c, const fs::path& dir, std::uint64_t seed) {
  const fs::path out = dir.parent_path();
  const LocalArtifacts local = load_local(out);
  const auto aux = dataforge::load_dataset(out / "data" / "aux.bin");
  const auto members = dataforge::load_dataset(out / "data" / "eval_members.bin");
  const auto nonmembers = dataforge::load_dataset(out / "data" / "eval_nonmembers.bin");
  json m;
  std::vector<mia::FeatureMode> modes{mia::FeatureMode::kAllTaps};
  if (c.mia.ablation) modes.push_back(mia::FeatureMode::kLogitsOnly);
  for (mia::FeatureMode mode : modes) {
    const std::string name = mode == mia::FeatureMode::kAllTaps ? "all_taps" : "logits_only";
    mia::MiaConfig cfg = c.mia.config;
    cfg.mode = mode;
    cfg.seed = nx::derive_seed(seed, name);
    const mia::MiaModel model = mia::train_mia(local.model, aux, cfg);
    const auto ms = mia::score(model, local.model, members.samples);
    const auto ns = mia::score(model, local.model, nonmembers.samples);
    write_scores(dir / ("scores_" + name + ".csv"), ms, ns);
    const mia::MiaMetrics r = mia::evaluate_scores(ms, ns, c.mia.fpr_target);
    m[name] = {{"ba", r.ba},
               {"accuracy_at_half", r.accuracy_at_half},
               {"auc", r.auc},
               {"tpr_at_low_fpr", r.tpr_at_low_fpr},
               {"fpr_target", r.fpr_target},
               {"validation_auc", model.validation_auc}};
  }
  return m;
}

json stage_miv(const PipelineConfig& c, const fs::path& dir, std::uint64_t seed) {
  const fs::path out = dir.parent_path();
  const LocalArtifacts art = load_local(out);
  const auto aux = dataforge::load_dataset(out / "data" / "aux.bin");
  const auto real = dataforge::load_dataset(out / "data" / "real.bin");
  const auto nonmembers = dataforge::load_dataset(out / "data" / "eval_nonmembers.bin");

  modelzoo::ModelState eval =
      modelzoo::build(c.miv.eval_arch, real.dims, real.classes, nx::derive_seed(seed, "eval-init"));
  modelzoo::TrainConfig et = c.miv.eval_training;
  et.shuffle_seed = nx::derive_seed(seed, "eval-shuffle");
  modelzoo::train_classifier(eval, real.samples, real.labels, et);

  const miv::LocalModel local{.model = art.model, .checkpoints = art.checkpoints,
                              .learning_rate = art.learning_rate};
  miv::MivConfig cfg = c.miv.config;
  cfg.seed = nx::derive_seed(seed, "train");
  const miv::DualModel dual = miv::train_miv(aux, &local, cfg);
  const dataforge::LabDataset inverted =
      miv::invert(dual, c.miv.per_class, c.miv.sample_steps, nx::derive_seed(seed, "sample"));
  const miv::MivMetrics metrics = miv::evaluate_miv(inverted, eval, real.samples);
  dataforge::save_dataset(inverted, dir / "inverted.bin");
  miv::write_manifest_csv(inverted, metrics, dir / "manifest.csv");
  return {{"attack_accuracy", metrics.attack_accuracy},
          {"knn_distance", metrics.knn_distance},
          {"samples", inverted.size()},
          {"eval_model_accuracy", modelzoo::accuracy(eval, nonmembers.samples, nonmembers.labels)}};
}

json stage_theorem(const PipelineConfig& c, const fs::path& dir, std::uint64_t seed) {
  json m;
  for (modelzoo::Activation act : c.theorem.activations) {
    theoremlab::ExperimentConfig cfg = c.theorem.experiment;
    cfg.activation = act;
    cfg.seed = seed;
    const theoremlab::PerturbationExperiment e = theoremlab::run_experiment(cfg);
    const std::string name(activation_name(act));
    theoremlab::write_bound_csv(e, dir / ("bound_" + name + ".csv"));
    bool satisfied = true, zero_control = true;
    double min_slack = std::numeric_limits<double>::infinity();
    json per_delta = json::array();
    for (const theoremlab::DeltaResult& r : e.results) {
      satisfied = satisfied && r.bound.all_satisfied;
      min_slack = std::min(min_slack, r.bound.min_slack);
      if (r.delta == 0.0) {
        for (std::size_t t = 0; t < r.run.weight_gap.size(); ++t) {
          zero_control = zero_control && r.run.weight_gap[t] == 0.0 && r.run.loss_gap[t] == 0.0;
        }
      }
      per_delta.push_back({{"delta", r.delta},
                           {"terminal_weight_gap", theoremlab::terminal_weight_gap(r)},
                           {"terminal_loss_gap", theoremlab::terminal_loss_gap(r)},
                           {"max_loss_gap", theoremlab::max_loss_gap(r)},
                           {"bound_satisfied", r.bound.all_satisfied},
                           // JSON has no infinity; a zero gap has no finite slack.
                           {"min_slack", std::isfinite(r.bound.min_slack) ? json(r.bound.min_slack) : json(nullptr)}});
    }
    json a{{"params", e.params},
           {"l1", e.lipschitz.l1},
           {"l2", e.lipschitz.l2},
           {"bound_satisfied", satisfied},
           {"min_slack", std::isfinite(min_slack) ? json(min_slack) : json(nullptr)},
           {"zero_delta_control", zero_control},
           {"loss_gap_monotone", theoremlab::monotone_in_delta(e, theoremlab::max_loss_gap)},
           {"weight_gap_monotone", theoremlab::monotone_in_delta(e, theoremlab::terminal_weight_gap)},
           {"deltas", per_delta}};
    const auto& d = cfg.deltas;
    if (std::count(d.begin(), d.end(), 1e-3) && std::count(d.begin(), d.end(), 1e-4)) {
      a["loss_gap_ratio_1e-3_1e-4"] = theoremlab::loss_gap_ratio(e, 1e-3, 1e-4);
    }
    m[name] = a;
  }
  return m;
}

json run_stage(Stage s, const PipelineConfig& c, const fs::path& dir, std::uint64_t seed) {
  switch (s) {
    case Stage::kData: return stage_data(c, dir, seed);
    case Stage::kDistill: return stage_distill(c, dir, seed);
    case Stage::kLocal: return stage_local(c, dir, seed);
    case Stage::kCorpus: return stage_corpus(c, dir, seed);
    case Stage::kAia: return stage_aia(c, dir, seed);
    case Stage::kMia: return stage_mia(c, dir, seed);
    case Stage::kMiv: return stage_miv(c, dir, seed);
    case Stage::kTheorem: return stage_theorem(c, dir, seed);
  }
  throw std::logic_error("unhandled stage");
}

}  // namespace

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::kData: return "data";
    case Stage::kDistill: return "distill";
    case Stage::kLocal: return "local";
    case Stage::kCorpus: return "corpus";
    case Stage::kAia: return "aia";
    case Stage::kMia: return "mia";
    case Stage::kMiv: return "miv";
    case Stage::kTheorem: return "theorem";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  const std::string n = boost::to_lower_copy(std::string(name));
  for (Stage s : kOrder) {
    if (stage_name(s) == n) return s;
  }
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

std::vector<Stage> stage_dependencies(Stage s) {
  switch (s) {
    case Stage::kData:
    case Stage::kTheorem: return {};
    case Stage::kDistill:
    case Stage::kCorpus: return {Stage::kData};
    case Stage::kLocal: return {Stage::kDistill};
    case Stage::kAia: return {Stage::kCorpus};
    case Stage::kMia:
    case Stage::kMiv: return {Stage::kLocal, Stage::kData};
  }
  return {};
}

PipelineConfig parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  static const std::set<std::string> kSections{"run", "data", "distill", "local", "corpus",
                                               "aia", "mia", "miv", "theorem"};
  PipelineConfig c;
  for (const auto& [name, node] : tree) {
    if (!kSections.count(name)) throw ConfigError("unknown section [" + name + "]");
    if (node.empty()) throw ConfigError("key '" + name + "' outside a section");
    std::vector<std::string> lines;
    for (const auto& [k, v] : node) lines.push_back(k + "=" + v.data());
    std::sort(lines.begin(), lines.end());
    c.canonical[name] = boost::join(lines, "\n");
  }
  auto section = [&](const std::string& name) {
    auto child = tree.get_child_optional(name);
    return Section(child ? &*child : nullptr, name);
  };

  Section run = section("run");
  for (const std::string& s : run.list("stages", {})) c.stages.push_back(parse_stage(s));
  c.seed = run.get<std::uint64_t>("seed", c.seed);
  c.out = run.get<std::string>("out", c.out.string());
  run.reject_unknown();

  Section data = section("data");
  auto& g = c.data.generate;
  g.classes = data.get("classes", std::size_t{4});
  g.per_class = data.get("per_class", std::size_t{100});
  g.dims.height = data.get("height", g.dims.height);
  g.dims.width = data.get("width", g.dims.width);
  g.dims.channels = data.get("channels", g.dims.channels);
  g.noise = data.get("noise", 0.2);
  c.data.split.real_fraction = data.get("real_fraction", c.data.split.real_fraction);
  c.data.split.leak_fraction = data.get("leak_fraction", c.data.split.leak_fraction);
  data.reject_unknown();

  Section dist = section("distill");
  c.distill.config = {.ipc = 10, .outer_iterations = 40, .unroll_steps = 2, .data_optimizer = {.learning_rate = 1.0}};
  c.distill.config.algorithm = algorithm_of("[distill] algorithm", dist.get<std::string>("algorithm", "dd"));
  c.distill.arch = arch_of("[distill] arch", dist.get<std::string>("arch", "mlp-s"));
  parse_distill_template(dist, c.distill.config);
  dist.reject_unknown();

  Section local = section("local");
  auto& rc = c.local.record;
  rc.epochs = local.get("epochs", rc.epochs);
  rc.batch_size = local.get("batch_size", rc.batch_size);
  rc.optimizer.learning_rate = local.get("lr", rc.optimizer.learning_rate);
  local.reject_unknown();

  Section corpus = section("corpus");
  for (const auto& a : corpus.list("algorithms", {"dd", "dc", "tm"})) {
    c.corpus.algorithms.push_back(algorithm_of("[corpus] algorithms", a));
  }
  for (const auto& a : corpus.list("archs", {"mlp-s", "mlp-d", "cnn-s", "cnn-d"})) {
    c.corpus.archs.push_back(arch_of("[corpus] archs", a));
  }
  auto& cc = c.corpus.config;
  cc.per_cell = corpus.get("per_cell", cc.per_cell);
  cc.record = {.epochs = 30, .batch_size = 8, .optimizer = {.learning_rate = 0.05}};
  cc.record.epochs = corpus.get("epochs", cc.record.epochs);
  cc.record.batch_size = corpus.get("batch_size", cc.record.batch_size);
  cc.record.optimizer.learning_rate = corpus.get("lr", cc.record.optimizer.learning_rate);
  cc.test_fraction = corpus.get("test_fraction", cc.test_fraction);
  distiller::DistillConfig tmpl{
      .ipc = 10, .outer_iterations = 60, .unroll_steps = 2, .data_optimizer = {.learning_rate = 1.0}};
  tmpl.tm_experts = 1;
  tmpl.tm_expert_span = 3;
  tmpl.tm_student_steps = 3;
  tmpl.tm_expert_epochs = 6;
  tmpl.tm_expert_training = {.epochs = 6, .batch_size = 16, .optimizer = {.learning_rate = 0.05}};
  parse_distill_template(corpus, tmpl);
  cc.distill.clear();
  for (auto a : c.corpus.algorithms) {
    distiller::DistillConfig d = tmpl;
    d.algorithm = a;
    cc.distill.push_back(d);
  }
  corpus.reject_unknown();

  Section aia_s = section("aia");
  c.aia.config.epochs = aia_s.get("epochs", c.aia.config.epochs);
  c.aia.config.batch_size = aia_s.get("batch_size", c.aia.config.batch_size);
  c.aia.config.optimizer.learning_rate = aia_s.get("lr", c.aia.config.optimizer.learning_rate);
  c.aia.permutation_null = aia_s.get("permutation_null", c.aia.permutation_null);
  aia_s.reject_unknown();

  Section mia_s = section("mia");
  c.mia.config.steps = mia_s.get("steps", c.mia.config.steps);
  c.mia.config.batch_size = mia_s.get("batch_size", c.mia.config.batch_size);
  c.mia.config.optimizer.learning_rate = mia_s.get("lr", c.mia.config.optimizer.learning_rate);
  c.mia.config.validation_fraction = mia_s.get("validation_fraction", c.mia.config.validation_fraction);
  c.mia.ablation = mia_s.get("ablation", c.mia.ablation);
  c.mia.fpr_target = mia_s.get("fpr_target", c.mia.fpr_target);
  mia_s.reject_unknown();

  Section miv_s = section("miv");
  auto& mc = c.miv.config;
  mc.steps = miv_s.get("steps", std::size_t{500});
  mc.net.channels = miv_s.get("channels", std::size_t{8});
  mc.net.embed = miv_s.get("embed", mc.net.embed);
  mc.batch_size = miv_s.get("batch_size", mc.batch_size);
  mc.optimizer.kind = optimizer_of("[miv] optimizer", miv_s.get<std::string>("optimizer", "adam"));
  mc.optimizer.learning_rate = miv_s.get("lr", 5e-3);
  mc.p_uncond = miv_s.get("p_uncond", mc.p_uncond);
  mc.weights.eps = miv_s.get("lambda_eps", mc.weights.eps);
  mc.weights.clean = miv_s.get("lambda_clean", mc.weights.clean);
  mc.weights.mean = miv_s.get("lambda_mean", mc.weights.mean);
  mc.weights.cls = miv_s.get("lambda_cls", mc.weights.cls);
  mc.weights.trajectory = miv_s.get("lambda_traj", mc.weights.trajectory);
  c.miv.per_class = miv_s.get("per_class", c.miv.per_class);
  c.miv.sample_steps = miv_s.get("sample_steps", c.miv.sample_steps);
  c.miv.eval_arch = arch_of("[miv] eval_arch", miv_s.get<std::string>("eval_arch", "cnn-s"));
  c.miv.eval_training.epochs = miv_s.get("eval_epochs", c.miv.eval_training.epochs);
  miv_s.reject_unknown();

  Section th = section("theorem");
  auto& ex = c.theorem.experiment;
  ex.data.classes = g.classes;
  ex.data.dims = g.dims;
  ex.data.per_class = th.get("per_class", ex.data.per_class);
  ex.data.noise = th.get("noise", ex.data.noise);
  ex.arch = arch_of("[theorem] arch", th.get<std::string>("arch", "mlp-s"));
  ex.deltas = th.numbers("deltas", ex.deltas);
  ex.eta = th.get("eta", ex.eta);
  ex.epochs = th.get("epochs", ex.epochs);
  ex.lipschitz.samples = th.get("lipschitz_samples", ex.lipschitz.samples);
  ex.lipschitz.probe_radius = th.get("probe_radius", ex.lipschitz.probe_radius);
  std::vector<modelzoo::Activation> acts;
  for (const auto& a : th.list("activations", {"tanh", "relu"})) acts.push_back(activation_of("[theorem]", a));
  c.theorem.activations = acts;
  th.reject_unknown();

  validate(c);
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in);
}

void validate(const PipelineConfig& c) {
  if (c.stages.empty()) throw ConfigError("[run] stages: empty stage list");
  std::set<Stage> seen;
  for (Stage s : c.stages) {
    if (!seen.insert(s).second) throw ConfigError("[run] stages: '" + std::string(stage_name(s)) + "' listed twice");
  }
  for (Stage s : c.stages) {
    for (Stage d : stage_dependencies(s)) {
      if (!seen.count(d)) {
        throw ConfigError("[run] stages: '" + std::string(stage_name(s)) + "' requires '" +
                          std::string(stage_name(d)) + "'");
      }
    }
  }
  if (c.out.empty()) throw ConfigError("[run] out: empty output directory");

  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  const auto& g = c.data.generate;
  require(g.classes >= 2, "[data] classes must be >= 2");
  require(g.per_class >= 2, "[data] per_class must be >= 2");
  require(g.dims.flat() > 0, "[data] image dimensions must be positive");
  require(g.noise >= 0, "[data] noise must be >= 0");
  require(c.data.split.real_fraction > 0 && c.data.split.real_fraction < 1, "[data] real_fraction must be in (0,1)");
  require(c.data.split.leak_fraction > 0 && c.data.split.leak_fraction < 1, "[data] leak_fraction must be in (0,1)");
  wrap("[distill]", [&] { c.distill.config.validate(); return 0; });
  for (const auto& d : c.corpus.config.distill) wrap("[corpus]", [&] { d.validate(); return 0; });
  require(c.local.record.epochs >= 1, "[local] epochs must be >= 1");
  require(c.local.record.optimizer.learning_rate > 0, "[local] lr must be > 0");
  require(!c.corpus.algorithms.empty() && !c.corpus.archs.empty(), "[corpus] empty algorithm or arch list");
  require(c.corpus.config.per_cell >= 2, "[corpus] per_cell must be >= 2");
  require(c.corpus.config.record.epochs >= 1, "[corpus] epochs must be >= 1");
  require(c.corpus.config.test_fraction > 0 && c.corpus.config.test_fraction < 1,
          "[corpus] test_fraction must be in (0,1)");
  require(c.aia.config.epochs >= 1, "[aia] epochs must be >= 1");
  require(c.mia.config.steps >= 1, "[mia] steps must be >= 1");
  require(c.mia.config.validation_fraction >= 0 && c.mia.config.validation_fraction < 1,
          "[mia] validation_fraction must be in [0,1)");
  require(c.mia.fpr_target > 0 && c.mia.fpr_target < 1, "[mia] fpr_target must be in (0,1)");
  const auto& mc = c.miv.config;
  require(mc.steps >= 1 && mc.batch_size >= 1, "[miv] steps and batch_size must be >= 1");
  require(mc.p_uncond >= 0 && mc.p_uncond < 1, "[miv] p_uncond must be in [0,1)");
  const auto& w = mc.weights;
  require(w.eps >= 0 && w.clean >= 0 && w.mean >= 0 && w.cls >= 0 && w.trajectory >= 0,
          "[miv] lambda weights must be >= 0");
  require(c.miv.per_class >= 1 && c.miv.sample_steps >= 1, "[miv] per_class and sample_steps must be >= 1");
  const auto& ex = c.theorem.experiment;
  require(!ex.deltas.empty(), "[theorem] empty delta grid");
  for (double d : ex.deltas) require(d >= 0 && std::isfinite(d), "[theorem] deltas must be finite and >= 0");
  require(ex.eta > 0, "[theorem] eta must be > 0");
  require(ex.epochs >= 1, "[theorem] epochs must be >= 1");
  require(ex.lipschitz.samples >= 1, "[theorem] lipschitz_samples must be >= 1");
  require(!c.theorem.activations.empty(), "[theorem] empty activation list");
}

std::string stage_hash(const PipelineConfig& c, Stage s) {
  std::string text = std::string(stage_name(s)) + "\nseed=" + std::to_string(c.seed) + "\n";
  auto it = c.canonical.find(std::string(stage_name(s)));
  if (it != c.canonical.end()) text += it->second;
  // The theorem grid borrows the image geometry and class count from [data].
  if (s == Stage::kTheorem) {
    auto d = c.canonical.find("data");
    if (d != c.canonical.end()) text += "\n[data]\n" + d->second;
  }
  for (Stage d : stage_dependencies(s)) text += "\n<" + stage_hash(c, d);
  return fnv1a(text);
}

std::string config_hash(const PipelineConfig& c) {
  std::string text = "seed=" + std::to_string(c.seed) + "\nstages=";
  for (Stage s : ordered(c.stages)) text += std::string(stage_name(s)) + ",";
  for (const auto& [name, body] : c.canonical) {
    if (name != "run") text += "\n[" + name + "]\n" + body;
  }
  return fnv1a(text);
}

json run_pipeline(const PipelineConfig& c, std::ostream& log) {
  fs::create_directories(c.out);
  const std::string hash = config_hash(c);
  json report{{"config_hash", hash}, {"seed", c.seed}, {"stages", json::array()}};
  const fs::path report_path = c.out / "report.json";
  for (Stage s : ordered(c.stages)) {
    const std::string name(stage_name(s));
    const fs::path dir = c.out / name;
    const std::string sh = stage_hash(c, s);
    const fs::path marker = dir / "done";
    json entry{{"stage", name}, {"config_hash", hash}, {"stage_hash", sh}};
    const auto start = std::chrono::steady_clock::now();
    try {
      if (fs::exists(marker) && read_text(marker) == sh + "\n") {
        entry["metrics"] = json::parse(read_text(dir / "metrics.json"));
        entry["resumed"] = true;
        log << "[" << name << "] up to date\n";
      } else {
        fs::remove_all(dir);
        fs::create_directories(dir);
        log << "[" << name << "] running\n" << std::flush;
        const json metrics = run_stage(s, c, dir, nx::derive_seed(c.seed, name));
        write_text(dir / "metrics.json", metrics.dump(2) + "\n");
        write_text(marker, sh + "\n");
        entry["metrics"] = metrics;
        entry["resumed"] = false;
      }
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
    entry["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << "[" << name << "] done in " << std::fixed << std::setprecision(1) << entry["wall_seconds"].get<double>()
        << "s\n" << std::defaultfloat;
    report["stages"].push_back(entry);
    write_text(report_path, report.dump(2) + "\n");
  }
  return report;
}

std::vector<fs::path> emit_plots(const fs::path& run_dir) {
  const fs::path mia_dir = run_dir / "mia";
  if (!fs::exists(mia_dir / "done")) throw std::runtime_error("emit-plots: no completed mia stage under " + run_dir.string());
  const fs::path plots = run_dir / "plots";
  fs::create_directories(plots);
  std::vector<fs::path> written;
  for (const char* mode : {"all_taps", "logits_only"}) {
    const fs::path scores = mia_dir / (std::string("scores_") + mode + ".csv");
    if (!fs::exists(scores)) continue;
    const auto [members, nonmembers] = read_scores(scores);
    const fs::path path = plots / (std::string("roc_") + mode + ".csv");
    mia::write_roc_csv(mia::roc_curve(members, nonmembers), path);
    written.push_back(path);
  }
  if (written.empty()) throw std::runtime_error("emit-plots: mia stage left no score files");

  const fs::path corpus_file = run_dir / "corpus" / "corpus.bin";
  if (fs::exists(run_dir / "corpus" / "done") && fs::exists(corpus_file)) {
    const trajlab::TrajectoryCorpus corpus = trajlab::load_corpus(corpus_file);
    const fs::path path = plots / "trajectories.csv";
    std::ofstream os(path);
    os << std::setprecision(17) << "algorithm,arch,cell,seed";
    for (std::size_t t = 1; t <= corpus.epochs; ++t) os << ",loss_" << t;
    os << '\n';
    for (const auto& r : corpus.records) {
      os << int(r.algorithm) << ',' << int(r.arch) << ',' << corpus.cell_of(r) << ',' << r.seed;
      for (double l : r.losses) os << ',' << l;
      os << '\n';
    }
    if (!os) throw std::runtime_error("cannot write " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace distileak::cli
