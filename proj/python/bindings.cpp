#include "tempcircuit/attribution.hpp"
#include "tempcircuit/checkpoint.hpp"
#include "tempcircuit/crs.hpp"
#include "tempcircuit/intervention.hpp"
#include "tempcircuit/manifest.hpp"
#include "tempcircuit/training.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

namespace py = pybind11;
using namespace tempcircuit;

namespace {

// nlohmann::json <-> Python through the json module keeps the binding free of
// a second conversion layer.
py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::handle& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

struct PyFactBase {
  FactBase fb;
  Tokenizer tok;

  explicit PyFactBase(FactBase f) : fb(std::move(f)), tok(build_tokenizer(fb)) {}

  RenderedPrompt prompt(const std::string& subject, std::optional<int> year, const std::string& tmpl_id) const {
    const auto& tmpl = fb.find_template(tmpl_id);
    const TimeSpec time = year ? TimeSpec::at_year(*year) : TimeSpec::none();
    for (const auto& f : fb.temporal) {
      if (f.subject == subject) return render_prompt(fb, tok, f, tmpl, time);
    }
    for (const auto& f : fb.invariant) {
      if (f.subject == subject) return render_prompt(fb, tok, f, tmpl, time);
    }
    throw std::invalid_argument("no fact with subject " + subject);
  }
};

std::vector<CircuitGraph> graphs(const py::list& items) {
  std::vector<CircuitGraph> out;
  for (const auto& item : items) out.push_back(graph_from_json(from_py(item)));
  return out;
}

std::vector<std::string> labels(const std::vector<HeadRef>& heads) {
  std::vector<std::string> out;
  for (const auto& h : heads) out.push_back(h.label());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Temporal knowledge circuits in a toy transformer";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<RenderedPrompt>(m, "Prompt")
      .def_readonly("words", &RenderedPrompt::words)
      .def_readonly("tokens", &RenderedPrompt::tokens)
      .def_readonly("answer", &RenderedPrompt::answer)
      .def_readonly("answer_word", &RenderedPrompt::answer_word);

  py::class_<PyFactBase>(m, "FactBase")
      .def_static(
          "generate",
          [](std::uint64_t seed, int n_temporal, int n_invariant) {
            FactBaseParams p;
            p.seed = seed;
            p.n_temporal = n_temporal;
            p.n_invariant = n_invariant;
            return PyFactBase(generate_factbase(p));
          },
          py::arg("seed") = 7, py::arg("n_temporal") = 32, py::arg("n_invariant") = 16)
      .def_static("load",
                  [](const std::filesystem::path& path) {
                    return PyFactBase(factbase_from_json(nlohmann::json::parse(read_file(path))));
                  })
      .def("to_dict", [](const PyFactBase& self) { return to_py(factbase_to_json(self.fb)); })
      .def_property_readonly("temporal_subjects",
                             [](const PyFactBase& self) {
                               std::vector<std::string> out;
                               for (const auto& f : self.fb.temporal) out.push_back(f.subject);
                               return out;
                             })
      .def_property_readonly("invariant_subjects",
                             [](const PyFactBase& self) {
                               std::vector<std::string> out;
                               for (const auto& f : self.fb.invariant) out.push_back(f.subject);
                               return out;
                             })
      .def_property_readonly("vocab", [](const PyFactBase& self) { return self.tok.words(); })
      .def("encode", [](const PyFactBase& self, const std::vector<std::string>& words) { return self.tok.encode(words); })
      .def("decode", [](const PyFactBase& self, const std::vector<TokenId>& ids) { return self.tok.decode(ids); })
      .def("prompt", &PyFactBase::prompt, py::arg("subject"), py::arg("year") = py::none(),
           py::arg("template") = "fundamental");

  py::class_<Weights>(m, "Model")
      .def_static("load", &load_checkpoint)
      .def_static(
          "random",
          [](const PyFactBase& fb, int n_layers, int n_heads, int d_model, int d_head, int d_mlp, std::uint64_t seed) {
            ModelConfig base;
            base.n_layers = n_layers;
            base.n_heads = n_heads;
            base.d_model = d_model;
            base.d_head = d_head;
            base.d_mlp = d_mlp;
            base.seed = seed;
            return init_weights(model_config_for(fb.fb, fb.tok, base));
          },
          py::arg("factbase"), py::arg("n_layers") = 4, py::arg("n_heads") = 4, py::arg("d_model") = 32,
          py::arg("d_head") = 8, py::arg("d_mlp") = 64, py::arg("seed") = 1234)
      .def("save", [](const Weights& w, const std::filesystem::path& path) { save_checkpoint(path, w); })
      .def_property_readonly("config", [](const Weights& w) { return to_py(config_to_json(w.config)); })
      .def("logits", [](const Weights& w, const std::vector<TokenId>& tokens) { return forward(w, tokens).logits; })
      .def("attention", [](const Weights& w, const std::vector<TokenId>& tokens,
                           const std::string& head) { return attention_map(w, tokens, HeadRef::parse(head)); });

  m.def(
      "train",
      [](const PyFactBase& fb, int steps, double lr, std::uint64_t seed) {
        TrainConfig cfg;
        cfg.steps = steps;
        cfg.lr = lr;
        cfg.seed = seed;
        const ModelConfig model_config = model_config_for(fb.fb, fb.tok);
        py::gil_scoped_release release;
        TrainResult r = train(model_config, fb.fb, cfg);
        return std::make_tuple(std::move(r.weights), r.temporal_acc, r.invariant_acc);
      },
      py::arg("factbase"), py::arg("steps") = 3000, py::arg("lr") = 1e-3, py::arg("seed") = 1,
      "Train a model; returns (model, temporal_acc, invariant_acc).");

  m.def(
      "extract_circuit",
      [](const Weights& w, const PyFactBase& fb, const std::string& subject, int year, const std::string& tmpl_id,
         double tau, std::size_t top_n, int ig_steps, const std::string& metric) {
        const CircuitRequest req{IGConfig{ig_steps, parse_metric(metric)}, tau, top_n};
        const auto& tmpl = fb.fb.find_template(tmpl_id);
        CircuitGraph c;
        {
          py::gil_scoped_release release;
          const auto t = std::ranges::find(fb.fb.temporal, subject, &TemporalFact::subject);
          const auto v = std::ranges::find(fb.fb.invariant, subject, &InvariantFact::subject);
          if (t != fb.fb.temporal.end()) {
            c = extract_temporal_circuit(w, fb.fb, fb.tok, *t, year, tmpl, req);
          } else if (v != fb.fb.invariant.end()) {
            c = extract_invariant_circuit(w, fb.fb, fb.tok, *v, year, tmpl, req);
          } else {
            throw std::invalid_argument("no fact with subject " + subject);
          }
        }
        return to_py(export_json(c));
      },
      py::arg("model"), py::arg("factbase"), py::arg("subject"), py::arg("year") = 2004,
      py::arg("template") = "fundamental", py::arg("tau") = 0.1, py::arg("top_n") = 5000, py::arg("ig_steps") = 100,
      py::arg("metric") = "logit_diff", "Circuit JSON for one fact, as a dict.");

  m.def(
      "crs",
      [](double B, double P, double alpha, const std::string& distance) {
        if (distance != "main_text" && distance != "shortfall") throw std::invalid_argument("unknown distance " + distance);
        CRSParams params;
        params.alpha = alpha;
        params.distance = distance == "main_text" ? CrsDistance::MainText : CrsDistance::Shortfall;
        return crs(B, P, params);
      },
      py::arg("baseline"), py::arg("circuit"), py::arg("alpha") = 1.0, py::arg("distance") = "shortfall");

  m.def(
      "find_temporal_heads",
      [](const py::list& temporal, const py::list& invariant, double ratio, double backup_ratio) {
        const HeadDiscovery d = find_temporal_heads(graphs(temporal), graphs(invariant), ratio, backup_ratio);
        return std::make_pair(labels(d.temporal), labels(d.backup));
      },
      py::arg("temporal"), py::arg("invariant"), py::arg("ratio") = 1.0, py::arg("backup_ratio") = 0.7,
      "Returns (temporal_heads, backup_heads) as labels such as 'a1.h2'.");

  m.def(
      "full_edge_count",
      [](int n_layers, int n_heads) {
        ModelConfig cfg;
        cfg.n_layers = n_layers;
        cfg.n_heads = n_heads;
        return full_edge_count(cfg);
      },
      py::arg("n_layers"), py::arg("n_heads"));

  m.def("spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return spearman(a, b); });
  m.def("sha256_hex", [](const py::bytes& data) { return sha256_hex(std::string(data)); });
}
