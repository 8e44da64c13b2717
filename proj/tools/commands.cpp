#include "commands.hpp"

#include "tempcircuit/attribution.hpp"
#include "tempcircuit/checkpoint.hpp"
#include "tempcircuit/crs.hpp"
#include "tempcircuit/dataset.hpp"
#include "tempcircuit/format.hpp"
#include "tempcircuit/graph.hpp"
#include "tempcircuit/intervention.hpp"
#include "tempcircuit/manifest.hpp"
#include "tempcircuit/render.hpp"
#include "tempcircuit/tracing.hpp"
#include "tempcircuit/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace tempcircuit::cli {

namespace {

using nlohmann::json;

// Every float goes out with 9 significant digits so artifacts diff cleanly
// across platforms.
void round_floats(json& j) {
  if (j.is_number_float()) {
    const double v = j.get<double>();
    if (std::isfinite(v)) j = std::stod(fmt_num(v));
  } else if (j.is_structured()) {
    for (auto& child : j) round_floats(child);
  }
}

std::string dump(json j) {
  round_floats(j);
  return j.dump(2) + "\n";
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw std::invalid_argument("no such file: " + path.string());
  return json::parse(read_file(path));
}

class Artifacts {
 public:
  Artifacts(fs::path dir, std::string command) : dir_(std::move(dir)) {
    manifest_.command = std::move(command);
    fs::create_directories(dir_);
  }

  RunManifest& manifest() { return manifest_; }

  void input(const fs::path& path) { manifest_.add_input(path); }

  void text(const fs::path& relative, std::string_view body) {
    write_file_atomic(dir_ / relative, body);
    manifest_.add_output(dir_, relative);
  }

  void write_json(const fs::path& relative, const json& j) { text(relative, dump(j)); }

  void checkpoint(const fs::path& relative, const Weights& w) {
    save_checkpoint(dir_ / relative, w);
    manifest_.add_output(dir_, relative);
  }

  void finish() {
    write_file_atomic(dir_ / (manifest_.command + ".manifest.json"), dump(manifest_.to_json()));
    std::cout << "wrote " << manifest_.outputs.size() << " artifact(s) to " << dir_.string() << "\n";
  }

 private:
  fs::path dir_;
  RunManifest manifest_;
};

struct Loaded {
  FactBase fb;
  Tokenizer tok;
  Weights w;
};

FactBase load_factbase(const fs::path& path) { return factbase_from_json(read_json(path)); }

Loaded load_inputs(const fs::path& model, const fs::path& factbase, Artifacts& art) {
  if (!fs::exists(model)) throw std::invalid_argument("no such file: " + model.string());
  Loaded in{load_factbase(factbase), {}, load_checkpoint(model)};
  in.tok = build_tokenizer(in.fb);
  if (in.w.config.vocab_size != in.tok.size()) {
    throw std::invalid_argument("model vocabulary (" + std::to_string(in.w.config.vocab_size) +
                                ") does not match the fact base (" + std::to_string(in.tok.size()) + ")");
  }
  art.input(model);
  art.input(factbase);
  return in;
}

const TemporalFact* find_temporal(const FactBase& fb, std::string_view subject) {
  const auto it = std::ranges::find(fb.temporal, subject, &TemporalFact::subject);
  return it == fb.temporal.end() ? nullptr : &*it;
}

const InvariantFact* find_invariant(const FactBase& fb, std::string_view subject) {
  const auto it = std::ranges::find(fb.invariant, subject, &InvariantFact::subject);
  return it == fb.invariant.end() ? nullptr : &*it;
}

std::string file_stem(std::string_view name) {
  std::string out;
  for (char c : name) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_';
  return out;
}

template <class Fn>
std::string to_text(Fn&& write) {
  std::ostringstream out;
  write(out);
  return out.str();
}

std::vector<PromptPair> pairs_for(const Loaded& in, std::string_view subject, int year, const PromptTemplate& tmpl) {
  if (const auto* f = find_temporal(in.fb, subject)) return temporal_pairs(in.fb, in.tok, *f, year, tmpl);
  if (const auto* f = find_invariant(in.fb, subject)) return invariant_pairs(in.fb, in.tok, *f, year, tmpl);
  throw std::invalid_argument("unknown fact: " + std::string(subject));
}

CircuitRequest circuit_request(const CircuitOptions& o) {
  CircuitRequest req;
  req.ig.ig_steps = o.ig_steps;
  req.ig.metric = parse_metric(o.metric);
  req.ig.validate();
  req.tau = o.tau;
  req.top_n = o.top_n;
  return req;
}

json circuit_config(const CircuitOptions& o) {
  return {{"fact", o.fact}, {"all", o.all},   {"year", o.year},         {"years", o.years},
          {"template", o.template_id},         {"tau", o.tau},          {"top_n", o.top_n},
          {"ig_steps", o.ig_steps},            {"metric", o.metric}};
}

std::vector<CircuitGraph> load_circuits(const fs::path& dir, Artifacts& art) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::ranges::sort(files);
  std::vector<CircuitGraph> circuits;
  for (const auto& f : files) {
    circuits.push_back(graph_from_json(read_json(f)));
    art.input(f);
  }
  return circuits;
}

json heads_json(std::span<const HeadRef> heads) {
  json j = json::array();
  for (const auto& h : heads) j.push_back(h.label());
  return j;
}

ValueTap parse_tap(std::string_view name) {
  if (name == "value") return ValueTap::Value;
  if (name == "mixed") return ValueTap::Mixed;
  throw std::invalid_argument("unknown tap '" + std::string(name) + "' (expected value or mixed)");
}

}  // namespace

void cmd_gen(const GenOptions& o) {
  FactBaseParams p;
  p.seed = o.seed;
  p.n_temporal = o.n_temporal;
  p.n_invariant = o.n_invariant;
  p.year_min = o.year_min;
  p.year_max = o.year_max;
  const FactBase fb = generate_factbase(p);

  Artifacts art(o.out, "gen");
  art.manifest().config = {{"n_temporal", o.n_temporal},
                           {"n_invariant", o.n_invariant},
                           {"year_min", o.year_min},
                           {"year_max", o.year_max}};
  art.manifest().seeds["factbase"] = o.seed;
  art.write_json("factbase.json", factbase_to_json(fb));
  art.finish();
}

void cmd_train(const TrainOptions& o) {
  Artifacts art(o.out, "train");
  const FactBase fb = load_factbase(o.factbase);
  art.input(o.factbase);
  const Tokenizer tok = build_tokenizer(fb);

  ModelConfig base;
  base.n_layers = o.n_layers;
  base.n_heads = o.n_heads;
  base.d_model = o.d_model;
  base.d_head = o.d_head;
  base.d_mlp = o.d_mlp;
  base.use_rmsnorm = o.rmsnorm;
  base.seed = o.init_seed;
  const ModelConfig model_cfg = model_config_for(fb, tok, base);

  TrainConfig cfg;
  cfg.lr = o.lr;
  if (o.schedule == "cosine") {
    cfg.schedule = LrSchedule::Cosine;
  } else if (o.schedule == "constant") {
    cfg.schedule = LrSchedule::Constant;
  } else {
    throw std::invalid_argument("unknown schedule '" + o.schedule + "' (expected cosine or constant)");
  }
  cfg.steps = o.steps;
  cfg.batch_size = o.batch_size;
  cfg.weight_decay = o.weight_decay;
  cfg.eval_every = o.eval_every;
  cfg.seed = o.seed;
  cfg.validate();

  const TrainResult result = train(model_cfg, fb, cfg);

  art.manifest().config = {{"model", config_to_json(model_cfg)}, {"train", train_config_to_json(cfg)}};
  art.manifest().seeds["init"] = o.init_seed;
  art.manifest().seeds["train"] = o.seed;
  art.checkpoint("model.tckp", result.weights);
  art.text("metrics.csv", to_text([&](std::ostream& out) { write_metrics_csv(out, result.history); }));
  art.write_json("train.json", {{"temporal_acc", result.temporal_acc},
                                {"invariant_acc", result.invariant_acc},
                                {"model", config_to_json(model_cfg)},
                                {"train", train_config_to_json(cfg)}});
  std::cout << "temporal acc " << fmt_num(result.temporal_acc) << ", invariant acc " << fmt_num(result.invariant_acc)
            << "\n";
  art.finish();
}

void cmd_circuit(const CircuitOptions& o) {
  if (o.all == !o.fact.empty()) throw std::invalid_argument("give exactly one of --fact and --all");
  Artifacts art(o.out, "circuit");
  const Loaded in = load_inputs(o.model, o.factbase, art);
  const PromptTemplate& tmpl = in.fb.find_template(o.template_id);
  const CircuitRequest req = circuit_request(o);
  art.manifest().config = circuit_config(o);

  if (!o.all) {
    const auto pairs = pairs_for(in, o.fact, o.year, tmpl);
    const EdgeScores scores = eap_ig_scores(in.w, pairs, req.ig);
    const CircuitGraph circuit = circuit_from_scores(in.w.config, scores, o.fact, o.year, tmpl, req);
    art.write_json("circuit.json", export_json(circuit));
    art.text("circuit.dot", export_dot(circuit));
    art.text("scores.csv", to_text([&](std::ostream& out) { write_scores_csv(out, scores); }));
    std::cout << o.fact << " @ " << o.year << ": " << circuit.edges.size() << " edges, " << circuit.heads().size()
              << " heads\n";
  } else {
    for (const auto& f : in.fb.temporal) {
      for (int year : o.years) {
        const CircuitGraph c = extract_temporal_circuit(in.w, in.fb, in.tok, f, year, tmpl, req);
        art.write_json(fs::path("circuits") / "temporal" / (file_stem(f.subject) + "_" + std::to_string(year) + ".json"),
                       export_json(c));
      }
    }
    for (const auto& f : in.fb.invariant) {
      const CircuitGraph c = extract_invariant_circuit(in.w, in.fb, in.tok, f, o.year, tmpl, req);
      art.write_json(fs::path("circuits") / "invariant" / (file_stem(f.subject) + ".json"), export_json(c));
    }
  }
  art.finish();
}

void cmd_crs(const CrsOptions& o) {
  Artifacts art(o.out, "crs");
  const Loaded in = load_inputs(o.model, o.factbase, art);
  const CircuitGraph circuit = graph_from_json(read_json(o.circuit));
  art.input(o.circuit);
  if (!circuit.provenance) throw ParseError("circuit has no provenance; cannot rebuild its prompt pairs");
  const CircuitProvenance& prov = *circuit.provenance;
  if (circuit.n_layers != in.w.config.n_layers || circuit.n_heads != in.w.config.n_heads) {
    throw std::invalid_argument("circuit shape does not match the model");
  }

  CRSParams params;
  params.alpha = o.alpha;
  if (o.distance == "shortfall") {
    params.distance = CrsDistance::Shortfall;
  } else if (o.distance == "main_text") {
    params.distance = CrsDistance::MainText;
  } else {
    throw std::invalid_argument("unknown distance '" + o.distance + "' (expected shortfall or main_text)");
  }
  params.validate();

  const auto pairs = pairs_for(in, prov.fact, prov.year, in.fb.find_template(prov.template_id));
  const CRSReport report = crs_report(in.w, circuit, pairs, parse_metric(prov.metric), params);
  art.manifest().config = {{"params", crs_params_to_json(params)}};
  art.write_json("crs.json", crs_report_json(report));
  std::cout << "CRS " << fmt_num(report.score) << " (B " << fmt_num(report.B) << ", P " << fmt_num(report.P) << ")\n";
  art.finish();
}

void cmd_trace(const TraceOptionsCli& o) {
  Artifacts art(o.out, "trace");
  const Loaded in = load_inputs(o.model, o.factbase, art);
  const TemporalFact* fact = find_temporal(in.fb, o.fact);
  if (fact == nullptr) throw std::invalid_argument("unknown temporal fact: " + o.fact);
  const PromptTemplate& tmpl = in.fb.find_template(o.template_id);

  TraceOptions opts;
  opts.sigma = o.sigma;
  opts.window = o.window;
  opts.seed = o.seed;
  const auto traced = trace_suite(in.w, in.fb, in.tok, *fact, o.years, tmpl, opts);

  json summary = json::array();
  for (const auto& t : traced) {
    const std::string kind(restore_kind_name(t.grid.restore.kind));
    const std::string name =
        std::string(span_kind_name(t.span)) + "_" + std::to_string(t.year) + "_" + kind + ".csv";
    art.text(fs::path("trace") / name, to_text([&](std::ostream& out) { write_grid_csv(out, t.grid, t.words); }));
    double peak = 0.0;
    for (int p : t.corrupted) peak = std::max(peak, t.grid.values.row(p).maxCoeff());
    summary.push_back({{"file", "trace/" + name},
                       {"span", span_kind_name(t.span)},
                       {"year", t.year},
                       {"restore", kind},
                       {"corrupted_positions", t.corrupted},
                       {"p_clean", t.grid.p_clean},
                       {"p_corrupted", t.grid.p_corr},
                       {"max_restored_over_corrupted", peak}});
  }
  art.manifest().config = {{"fact", o.fact},     {"years", o.years},   {"template", o.template_id},
                           {"window", o.window}, {"sigma", o.sigma ? json(*o.sigma) : json(nullptr)}};
  art.manifest().seeds["noise"] = o.seed;
  art.write_json(fs::path("trace") / "summary.json", summary);
  art.finish();
}

void cmd_ablate(const AblateOptions& o) {
  Artifacts art(o.out, "ablate");
  const Loaded in = load_inputs(o.model, o.factbase, art);
  std::vector<HeadRef> heads;
  for (const auto& label : o.heads) {
    heads.push_back(HeadRef::parse(label));
    heads.back().validate(in.w.config);
  }
  const std::vector<int> years = o.years.empty() ? in.fb.years() : o.years;
  const AblationStudy study =
      ablation_study(in.w, in.fb, in.tok, heads, in.fb.find_template(o.template_id), years, o.invariant_year);

  json j = ablation_study_json(study);
  j["heads"] = heads_json(heads);
  art.manifest().config = {{"heads", o.heads}, {"years", years}, {"invariant_year", o.invariant_year},
                           {"template", o.template_id}};
  art.write_json("ablation.json", j);
  std::cout << "temporal p " << fmt_num(study.temporal.baseline) << " -> " << fmt_num(study.temporal.ablated)
            << ", invariant p " << fmt_num(study.invariant.baseline) << " -> " << fmt_num(study.invariant.ablated)
            << "\n";
  art.finish();
}

void cmd_heads(const HeadsOptions& o) {
  Artifacts art(o.out, "heads");
  const auto temporal = load_circuits(o.temporal_dir, art);
  const auto invariant = load_circuits(o.invariant_dir, art);
  if (temporal.empty()) throw std::invalid_argument("no temporal circuits in " + o.temporal_dir.string());
  const HeadDiscovery found = find_temporal_heads(temporal, invariant, o.ratio, o.backup_ratio);

  const int n_layers = temporal.front().n_layers;
  const int n_heads = temporal.front().n_heads;
  const auto temporal_ex = head_exhibition(temporal, n_layers, n_heads);
  const auto invariant_ex = head_exhibition(invariant, n_layers, n_heads);
  json exhibition = json::object();
  for (int l = 0; l < n_layers; ++l) {
    for (int h = 0; h < n_heads; ++h) {
      const auto i = static_cast<std::size_t>(l * n_heads + h);
      exhibition[HeadRef{l, h}.label()] = {{"temporal", temporal_ex[i]}, {"invariant", invariant_ex[i]}};
    }
  }
  art.manifest().config = {{"ratio", o.ratio}, {"backup_ratio", o.backup_ratio}};
  art.write_json("heads.json", {{"temporal_heads", heads_json(found.temporal)},
                                {"backup_heads", heads_json(found.backup)},
                                {"n_temporal_circuits", temporal.size()},
                                {"n_invariant_circuits", invariant.size()},
                                {"exhibition", exhibition}});
  std::cout << found.temporal.size() << " temporal head(s), " << found.backup.size() << " backup head(s)\n";
  art.finish();
}

void cmd_edit(const EditOptions& o) {
  Artifacts art(o.out, "edit");
  const Loaded in = load_inputs(o.model, o.factbase, art);
  const HeadRef head = HeadRef::parse(o.head);
  head.validate(in.w.config);
  const ValueTap tap = parse_tap(o.tap);
  const PromptTemplate& tmpl = in.fb.find_template(o.template_id);
  const auto cases = make_edit_cases(in.fb, in.tok, tmpl, o.from_year, o.to_year, o.n_sources, o.cases);
  if (cases.empty()) throw std::invalid_argument("no fact changes object between the two years");

  json runs = json::array();
  int shifted = 0;
  for (const auto& c : cases) {
    for (double lambda : o.lambdas) {
      EditSpec spec{c.sources, c.target, c.expected, head, lambda, tap};
      const EditReport report = inject_and_generate(in.w, spec);
      shifted += report.first_token_shift ? 1 : 0;
      json r = edit_report_json(report, &in.tok);
      r["target"] = in.tok.decode_text(c.target.tokens);
      r["expected"] = in.tok.word(c.expected);
      r["lambda"] = lambda;
      runs.push_back(std::move(r));
    }
  }
  const auto n_runs = static_cast<double>(runs.size());
  art.manifest().config = {{"head", o.head},         {"lambdas", o.lambdas},     {"from_year", o.from_year},
                           {"to_year", o.to_year},   {"n_sources", o.n_sources}, {"cases", o.cases},
                           {"tap", o.tap},           {"template", o.template_id}};
  art.write_json("edit.json", {{"head", head.label()},
                               {"n_cases", cases.size()},
                               {"success_rate", n_runs > 0 ? shifted / n_runs : 0.0},
                               {"runs", runs}});
  if (o.sweep) {
    const Eigen::MatrixXi counts = edit_sweep(in.w, cases, o.lambdas, tap);
    art.text("success.csv", to_text([&](std::ostream& out) { write_success_csv(out, counts); }));
  }
  std::cout << head.label() << ": P(answer) rose in " << shifted << " of " << runs.size() << " runs\n";
  art.finish();
}

void cmd_render(const RenderOptions& o) {
  if (o.inputs.empty()) throw std::invalid_argument("nothing to render");
  Artifacts art(o.out, "render");
  for (const auto& path : o.inputs) {
    if (!fs::exists(path)) throw std::invalid_argument("no such file: " + path.string());
    art.input(path);
    const std::string stem = path.stem().string();
    if (path.extension() == ".csv") {
      std::ifstream in(path);
      const LabeledMatrix m = read_matrix_csv(in);
      SvgOptions svg;
      svg.title = o.title.empty() ? stem : o.title;
      if (!m.label_columns.empty() && m.label_columns.front() == "layer") {
        svg.x_label = "head";
        svg.y_label = "layer";
      } else {
        svg.x_label = o.x_label;
        svg.y_label = "position";
      }
      svg.vmin = o.vmin;
      svg.vmax = o.vmax;
      art.text(stem + ".svg", heatmap_svg(m, svg));
    } else if (path.extension() == ".json") {
      art.text(stem + ".dot", export_dot(graph_from_json(read_json(path))));
    } else {
      throw std::invalid_argument("cannot render " + path.string() + " (expected .csv or .json)");
    }
  }
  art.manifest().config = {{"title", o.title}};
  art.finish();
}

}  // namespace tempcircuit::cli
