#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tempcircuit::cli {

namespace fs = std::filesystem;

struct GenOptions {
  fs::path out = ".";
  std::uint64_t seed = 7;
  int n_temporal = 32;
  int n_invariant = 16;
  int year_min = 1999;
  int year_max = 2009;
};

struct TrainOptions {
  fs::path out = ".";
  fs::path factbase;
  std::uint64_t seed = 1;
  std::uint64_t init_seed = 1234;
  double lr = 1e-3;
  std::string schedule = "cosine";
  int steps = 3000;
  int batch_size = 32;
  double weight_decay = 0.01;
  int eval_every = 250;
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 32;
  int d_head = 8;
  int d_mlp = 64;
  bool rmsnorm = false;
};

struct CircuitOptions {
  fs::path out = ".";
  fs::path model;
  fs::path factbase;
  std::string fact;
  bool all = false;
  int year = 2004;
  std::vector<int> years{1999, 2004, 2009};
  std::string template_id = "fundamental";
  double tau = 0.1;
  std::size_t top_n = 5000;
  int ig_steps = 100;
  std::string metric = "logit_diff";
};

struct CrsOptions {
  fs::path out = ".";
  fs::path model;
  fs::path factbase;
  fs::path circuit;
  double alpha = 1.0;
  std::string distance = "shortfall";
};

struct TraceOptionsCli {
  fs::path out = ".";
  fs::path model;
  fs::path factbase;
  std::string fact;
  std::vector<int> years{1999, 2004};
  std::string template_id = "fundamental";
  int window = 3;
  std::optional<double> sigma;
  std::uint64_t seed = 0;
};

struct AblateOptions {
  fs::path out = ".";
  fs::path model;
  fs::path factbase;
  std::vector<std::string> heads;
  std::vector<int> years;  // empty = every year
  int invariant_year = 2004;
  std::string template_id = "fundamental";
};

struct HeadsOptions {
  fs::path out = ".";
  fs::path temporal_dir;
  fs::path invariant_dir;
  double ratio = 1.0;
  double backup_ratio = 0.7;
};

struct EditOptions {
  fs::path out = ".";
  fs::path model;
  fs::path factbase;
  std::string head;
  std::vector<double> lambdas{1.0, 3.0, 6.0};
  int from_year = 1999;
  int to_year = 2009;
  int n_sources = 5;
  int cases = 8;
  std::string tap = "value";
  std::string template_id = "fundamental";
  bool sweep = false;
};

struct RenderOptions {
  fs::path out = ".";
  std::vector<fs::path> inputs;
  std::string title;
  std::string x_label = "layer";  // columns of position-indexed tables
  std::optional<double> vmin;
  std::optional<double> vmax;
};

void cmd_gen(const GenOptions& o);
void cmd_train(const TrainOptions& o);
void cmd_circuit(const CircuitOptions& o);
void cmd_crs(const CrsOptions& o);
void cmd_trace(const TraceOptionsCli& o);
void cmd_ablate(const AblateOptions& o);
void cmd_heads(const HeadsOptions& o);
void cmd_edit(const EditOptions& o);
void cmd_render(const RenderOptions& o);

}  // namespace tempcircuit::cli
