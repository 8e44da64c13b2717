#include "commands.hpp"

#include "tempcircuit/parallel.hpp"
#include "tempcircuit/types.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>

namespace {

using namespace tempcircuit::cli;

void add_out(CLI::App* cmd, fs::path& out) { cmd->add_option("--out", out, "Output directory")->capture_default_str(); }

void add_model_inputs(CLI::App* cmd, fs::path& model, fs::path& factbase) {
  cmd->add_option("--model", model, "Trained checkpoint (.tckp)")->required();
  cmd->add_option("--factbase", factbase, "Fact base JSON")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal knowledge circuits on a toy transformer"};
  app.set_config("--config", "", "TOML/INI file with option values; [subcommand] sections apply to that command");
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: TEMPCIRCUIT_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic fact base");
  add_out(gen_cmd, gen.out);
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--n-temporal", gen.n_temporal)->capture_default_str();
  gen_cmd->add_option("--n-invariant", gen.n_invariant)->capture_default_str();
  gen_cmd->add_option("--year-min", gen.year_min)->capture_default_str();
  gen_cmd->add_option("--year-max", gen.year_max)->capture_default_str();

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train the model to memorize a fact base");
  add_out(train_cmd, train.out);
  train_cmd->add_option("--factbase", train.factbase)->required();
  train_cmd->add_option("--seed", train.seed, "Batch sampling seed")->capture_default_str();
  train_cmd->add_option("--init-seed", train.init_seed, "Weight initialization seed")->capture_default_str();
  train_cmd->add_option("--lr", train.lr)->capture_default_str();
  train_cmd->add_option("--schedule", train.schedule)->check(CLI::IsMember({"cosine", "constant"}))->capture_default_str();
  train_cmd->add_option("--steps", train.steps)->capture_default_str();
  train_cmd->add_option("--batch-size", train.batch_size)->capture_default_str();
  train_cmd->add_option("--weight-decay", train.weight_decay)->capture_default_str();
  train_cmd->add_option("--eval-every", train.eval_every)->capture_default_str();
  train_cmd->add_option("--n-layers", train.n_layers)->capture_default_str();
  train_cmd->add_option("--n-heads", train.n_heads)->capture_default_str();
  train_cmd->add_option("--d-model", train.d_model)->capture_default_str();
  train_cmd->add_option("--d-head", train.d_head)->capture_default_str();
  train_cmd->add_option("--d-mlp", train.d_mlp)->capture_default_str();
  train_cmd->add_flag("--rmsnorm", train.rmsnorm, "Pre-norm RMSNorm in every block");

  CircuitOptions circuit;
  auto* circuit_cmd = app.add_subcommand("circuit", "Extract knowledge circuits with EAP-IG");
  add_out(circuit_cmd, circuit.out);
  add_model_inputs(circuit_cmd, circuit.model, circuit.factbase);
  circuit_cmd->add_option("--fact", circuit.fact, "Subject of one temporal or invariant fact");
  circuit_cmd->add_flag("--all", circuit.all, "Every temporal fact at --years and every invariant fact at --year");
  circuit_cmd->add_option("--year", circuit.year)->capture_default_str();
  circuit_cmd->add_option("--years", circuit.years)->delimiter(',')->capture_default_str();
  circuit_cmd->add_option("--template", circuit.template_id)->capture_default_str();
  circuit_cmd->add_option("--tau", circuit.tau)->capture_default_str();
  circuit_cmd->add_option("--top-n", circuit.top_n)->capture_default_str();
  circuit_cmd->add_option("--ig-steps", circuit.ig_steps)->capture_default_str();
  circuit_cmd->add_option("--metric", circuit.metric)
      ->check(CLI::IsMember({"logit_diff", "log_prob"}))
      ->capture_default_str();

  CrsOptions crs;
  auto* crs_cmd = app.add_subcommand("crs", "Score a circuit's faithfulness");
  add_out(crs_cmd, crs.out);
  add_model_inputs(crs_cmd, crs.model, crs.factbase);
  crs_cmd->add_option("--circuit", crs.circuit, "Circuit JSON")->required();
  crs_cmd->add_option("--alpha", crs.alpha)->capture_default_str();
  crs_cmd->add_option("--distance", crs.distance)
      ->check(CLI::IsMember({"shortfall", "main_text"}))
      ->capture_default_str();

  TraceOptionsCli trace;
  auto* trace_cmd = app.add_subcommand("trace", "Causal tracing grids for one temporal fact");
  add_out(trace_cmd, trace.out);
  add_model_inputs(trace_cmd, trace.model, trace.factbase);
  trace_cmd->add_option("--fact", trace.fact)->required();
  trace_cmd->add_option("--years", trace.years)->delimiter(',')->capture_default_str();
  trace_cmd->add_option("--template", trace.template_id)->capture_default_str();
  trace_cmd->add_option("--window", trace.window)->capture_default_str();
  trace_cmd->add_option("--sigma", trace.sigma, "Noise scale (default: 3x the embedding std)");
  trace_cmd->add_option("--seed", trace.seed, "Noise seed")->capture_default_str();

  AblateOptions ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Zero-ablate heads and compare target probabilities");
  add_out(ablate_cmd, ablate.out);
  add_model_inputs(ablate_cmd, ablate.model, ablate.factbase);
  ablate_cmd->add_option("--heads", ablate.heads, "Heads such as a3.h2")->delimiter(',')->required();
  ablate_cmd->add_option("--years", ablate.years, "Temporal prompt years (default: all)")->delimiter(',');
  ablate_cmd->add_option("--invariant-year", ablate.invariant_year)->capture_default_str();
  ablate_cmd->add_option("--template", ablate.template_id)->capture_default_str();

  HeadsOptions heads;
  auto* heads_cmd = app.add_subcommand("heads", "Find temporal and backup temporal heads");
  add_out(heads_cmd, heads.out);
  heads_cmd->add_option("--temporal-dir", heads.temporal_dir)->required();
  heads_cmd->add_option("--invariant-dir", heads.invariant_dir)->required();
  heads_cmd->add_option("--ratio", heads.ratio)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  heads_cmd->add_option("--backup-ratio", heads.backup_ratio)->check(CLI::Range(0.0, 1.0))->capture_default_str();

  EditOptions edit;
  auto* edit_cmd = app.add_subcommand("edit", "Inject a head's time value into wrong-year prompts");
  add_out(edit_cmd, edit.out);
  add_model_inputs(edit_cmd, edit.model, edit.factbase);
  edit_cmd->add_option("--head", edit.head)->required();
  edit_cmd->add_option("--lambda", edit.lambdas)->delimiter(',')->capture_default_str();
  edit_cmd->add_option("--from-year", edit.from_year)->capture_default_str();
  edit_cmd->add_option("--to-year", edit.to_year)->capture_default_str();
  edit_cmd->add_option("--n-sources", edit.n_sources)->capture_default_str();
  edit_cmd->add_option("--cases", edit.cases)->capture_default_str();
  edit_cmd->add_option("--tap", edit.tap)->check(CLI::IsMember({"value", "mixed"}))->capture_default_str();
  edit_cmd->add_option("--template", edit.template_id)->capture_default_str();
  edit_cmd->add_flag("--sweep", edit.sweep, "Also inject at every head and write success.csv");

  RenderOptions render;
  auto* render_cmd = app.add_subcommand("render", "CSV tables to SVG heatmaps, circuit JSON to DOT");
  add_out(render_cmd, render.out);
  render_cmd->add_option("inputs", render.inputs)->required();
  render_cmd->add_option("--title", render.title);
  render_cmd->add_option("--x-label", render.x_label)->capture_default_str();
  render_cmd->add_option("--vmin", render.vmin);
  render_cmd->add_option("--vmax", render.vmax);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (threads > 0) tempcircuit::set_thread_count(threads);
    if (*gen_cmd) cmd_gen(gen);
    if (*train_cmd) cmd_train(train);
    if (*circuit_cmd) cmd_circuit(circuit);
    if (*crs_cmd) cmd_crs(crs);
    if (*trace_cmd) cmd_trace(trace);
    if (*ablate_cmd) cmd_ablate(ablate);
    if (*heads_cmd) cmd_heads(heads);
    if (*edit_cmd) cmd_edit(edit);
    if (*render_cmd) cmd_render(render);
  } catch (const tempcircuit::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const tempcircuit::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
