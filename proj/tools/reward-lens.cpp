// reward-lens: command-line surface over the library. One subcommand per
// analysis; reports are flat JSON (plus optional SVG plots), reproducible
// byte for byte given the same model, inputs and seed.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rewardlens/attribution.hpp"
#include "rewardlens/comparator.hpp"
#include "rewardlens/divergence.hpp"
#include "rewardlens/engine.hpp"
#include "rewardlens/geometry.hpp"
#include "rewardlens/jsonl.hpp"
#include "rewardlens/lens.hpp"
#include "rewardlens/model.hpp"
#include "rewardlens/patching.hpp"
#include "rewardlens/probes.hpp"
#include "rewardlens/report_json.hpp"
#include "rewardlens/sae.hpp"
#include "rewardlens/svg.hpp"

namespace fs = std::filesystem;
using namespace rewardlens;

namespace {

struct GlobalOptions {
  std::uint64_t seed = 0;
  bool strict = false;
  std::string data_dir;
  int threads = 0;
};

fs::path resolve_data_dir(const GlobalOptions& g) {
  if (!g.data_dir.empty()) return g.data_dir;
  if (const char* env = std::getenv("REWARD_LENS_DATA")) return env;
#ifdef REWARDLENS_SOURCE_DATA_DIR
  if (fs::exists(fs::path(REWARDLENS_SOURCE_DATA_DIR) / "vocab_default.txt"))
    return REWARDLENS_SOURCE_DATA_DIR;
#endif
  return "data";
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  atomic_write_file(path, text);
}

void write_json_file(const fs::path& path, const ordered_json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

ordered_json make_summary(const std::string& subcommand,
                          const GlobalOptions& g) {
  ordered_json j;
  j["tool"] = "reward-lens";
  j["format"] = "run-summary-v1";
  j["subcommand"] = subcommand;
  j["seed"] = g.seed;
  return j;
}

// Degeneracies downgrade to warnings unless --strict escalates them.
void finish_summary(ordered_json& summary, const std::vector<std::string>& warnings,
                    const GlobalOptions& g, const fs::path& out) {
  summary["warnings"] = warnings;
  if (g.strict && !warnings.empty()) {
    for (const auto& w : warnings) std::cerr << "strict: " << w << "\n";
    fail(ErrorKind::degenerate_stat,
         "degeneracies present and --strict was given");
  }
  write_json_file(out, summary);
}

RewardModelBundle load_model_arg(const std::string& dir) {
  return load_model(fs::path(dir));
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::istringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (...) {
      fail(ErrorKind::argument, "bad number in list: " + item);
    }
  }
  return out;
}

std::vector<std::string> parse_string_list(const std::string& csv) {
  std::vector<std::string> out;
  std::istringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::argument:
      return 2;
    case ErrorKind::data_format:
    case ErrorKind::corrupt_blob:
    case ErrorKind::shape_mismatch:
    case ErrorKind::unknown_head_kind:
    case ErrorKind::io:
      return 3;
    default:
      return 4;  // degeneracies and numeric failures
  }
}

// ------------------------------------------------------------ subcommands

void cmd_build_toy(const GlobalOptions& g, const std::string& out_dir,
                   const std::string& kind, int layers, int d_model, int heads,
                   int d_mlp, int max_seq, const std::string& head,
                   int objectives, const std::string& norm,
                   const std::string& vocab_file, int vocab_size,
                   int plant_layer, const std::string& trigger, double gain,
                   int plant_unit) {
  TransformerConfig cfg;
  cfg.n_layers = layers;
  cfg.d_model = d_model;
  cfg.n_heads = heads;
  cfg.d_mlp = d_mlp;
  cfg.max_seq = max_seq;
  if (head == "scalar") {
    cfg.head_kind = HeadKind::scalar;
    cfg.n_objectives = 1;
  } else if (head == "multi") {
    cfg.head_kind = HeadKind::multi_objective;
    cfg.n_objectives = objectives;
  } else {
    fail(ErrorKind::argument, "head must be 'scalar' or 'multi'");
  }
  cfg.norm_kind = norm == "identity" ? NormKind::identity : NormKind::layernorm;

  if (vocab_size > 0) {
    cfg.vocab = {kBosToken, kSepToken};
    for (int i = 0; i < vocab_size; ++i)
      cfg.vocab.push_back("t" + std::to_string(i));
  } else if (!vocab_file.empty()) {
    cfg.vocab = read_vocab_file(vocab_file);
  } else {
    cfg.vocab = read_vocab_file(resolve_data_dir(g) / "vocab_default.txt");
  }

  if (kind == "seeded") {
    save_model(build_seeded_model(cfg, g.seed), out_dir);
  } else if (kind == "planted") {
    PlantSpec plant;
    plant.layer = plant_layer;
    plant.trigger_token = trigger;
    plant.gain = gain;
    require(plant_unit >= 0 && plant_unit < cfg.d_model, ErrorKind::argument,
            "plant-unit must lie in [0, d_model)");
    plant.direction = Vec::Unit(cfg.d_model, plant_unit);
    plant.head_seed = g.seed;
    save_model(build_planted_model(cfg, plant), out_dir);
  } else {
    fail(ErrorKind::argument, "kind must be 'seeded' or 'planted'");
  }
  std::cout << out_dir << "\n";
}

void cmd_score(const std::string& model_dir, const std::string& prompt,
               const std::string& response) {
  const auto m = load_model_arg(model_dir);
  std::printf("%.17g\n", score(m, prompt, response));
}

void cmd_lens(const GlobalOptions& g, const std::string& model_dir,
              const std::string& pairs_file, const std::string& out,
              const std::string& plot, std::size_t pair_index) {
  const auto m = load_model_arg(model_dir);
  const auto pairs = read_pair_file(pairs_file);
  std::vector<ordered_json> entries(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    ordered_json e = lens_to_json(trace(m, pairs[i]));
    e["pair_index"] = i;
    e["dimension"] = pairs[i].dimension;
    entries[i] = std::move(e);
  });

  ordered_json summary = make_summary("lens", g);
  summary["config_hash"] = model_config_hash(model_dir);
  summary["model_dir"] = model_dir;
  summary["n_pairs"] = pairs.size();
  summary["entries"] = entries;

  std::vector<std::string> warnings;
  for (const auto& e : entries)
    if (e["crystallisation_depth"].is_null())
      warnings.push_back("pair " + e["pair_index"].dump() +
                         ": crystallisation undefined (final differential "
                         "within the zero guard)");
  if (!plot.empty()) {
    require(pair_index < pairs.size(), ErrorKind::argument,
            "pair index out of range for --plot");
    write_text_file(plot,
                    emit_svg(entries[pair_index], PlotKind::trajectory));
  }
  finish_summary(summary, warnings, g, out);
}

void cmd_attribute(const GlobalOptions& g, const std::string& model_dir,
                   const std::string& pairs_file, const std::string& out,
                   const std::string& plot, const std::string& plot_kind,
                   std::size_t pair_index) {
  const auto m = load_model_arg(model_dir);
  const auto pairs = read_pair_file(pairs_file);
  std::vector<ordered_json> entries(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    ordered_json e = attribution_to_json(attribute(m, pairs[i]));
    e["pair_index"] = i;
    e["dimension"] = pairs[i].dimension;
    entries[i] = std::move(e);
  });

  ordered_json summary = make_summary("attribute", g);
  summary["config_hash"] = model_config_hash(model_dir);
  summary["model_dir"] = model_dir;
  summary["n_pairs"] = pairs.size();
  summary["entries"] = entries;
  if (!plot.empty()) {
    require(pair_index < pairs.size(), ErrorKind::argument,
            "pair index out of range for --plot");
    write_text_file(plot, emit_svg(entries[pair_index],
                                   parse_plot_kind(plot_kind)));
  }
  finish_summary(summary, {}, g, out);
}

void cmd_patch(const GlobalOptions& g, const std::string& model_dir,
               const std::string& pairs_file, const std::string& mode_name,
               const std::string& out, const std::string& plot,
               std::size_t pair_index) {
  const auto m = load_model_arg(model_dir);
  const auto pairs = read_pair_file(pairs_file);
  const PatchMode mode = parse_patch_mode(mode_name);
  std::vector<ordered_json> entries(pairs.size());
  std::vector<std::string> warnings;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto r = patch_all_components(m, pairs[i], mode);
    if (!r.normalized_effects.has_value())
      warnings.push_back("pair " + std::to_string(i) +
                         ": normalised effects suppressed (differential "
                         "within the zero guard)");
    ordered_json e = patching_to_json(r);
    e["pair_index"] = i;
    e["dimension"] = pairs[i].dimension;
    entries[i] = std::move(e);
  }

  ordered_json summary = make_summary("patch", g);
  summary["config_hash"] = model_config_hash(model_dir);
  summary["model_dir"] = model_dir;
  summary["mode"] = patch_mode_name(mode);
  summary["n_pairs"] = pairs.size();
  summary["entries"] = entries;
  if (!plot.empty()) {
    require(pair_index < pairs.size(), ErrorKind::argument,
            "pair index out of range for --plot");
    write_text_file(plot, emit_svg(entries[pair_index], PlotKind::topk_bar));
  }
  finish_summary(summary, warnings, g, out);
}

void cmd_divergence_patch(const GlobalOptions& g, const std::string& model_dir,
                          const std::string& pairs_file,
                          const std::string& corpus_file,
                          const std::string& mode_name, double threshold,
                          bool constrained, const std::string& out,
                          const std::string& save_estimator,
                          const std::string& load_estimator) {
  const auto m = load_model_arg(model_dir);
  const auto pairs = read_pair_file(pairs_file);
  const PatchMode mode = parse_patch_mode(mode_name);

  DistributionEstimator est;
  if (!load_estimator.empty()) {
    est = DistributionEstimator::load(load_estimator);
  } else {
    require(!corpus_file.empty(), ErrorKind::argument,
            "divergence-patch needs --corpus or --load-estimator");
    est = fit_distribution(m, read_corpus_file(corpus_file));
  }
  if (!save_estimator.empty()) est.save(save_estimator);

  std::vector<ordered_json> entries(pairs.size());
  std::vector<std::string> warnings;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto r = constrained
                       ? constrained_patch(m, est, pairs[i], mode, threshold)
                       : patch_with_divergence_check(m, est, pairs[i], mode,
                                                     threshold);
    if (r.degenerate_differential)
      warnings.push_back("pair " + std::to_string(i) +
                         ": degenerate differential, absolute classification "
                         "fallback used");
    if (r.flagged_low_reliability)
      warnings.push_back("pair " + std::to_string(i) +
                         ": reliability below 0.7");
    ordered_json e = divergence_to_json(r);
    e["pair_index"] = i;
    entries[i] = std::move(e);
  }

  ordered_json summary = make_summary("divergence-patch", g);
  summary["config_hash"] = model_config_hash(model_dir);
  summary["model_dir"] = model_dir;
  summary["mode"] = patch_mode_name(mode);
  summary["threshold"] = threshold;
  summary["constrained"] = constrained;
  summary["corpus_size"] = est.corpus_size;
  summary["n_pairs"] = pairs.size();
  summary["entries"] = entries;
  finish_summary(summary, warnings, g, out);
}

void cmd_hack(const GlobalOptions& g, const std::string& model_dir,
              const std::string& probes_file, const std::string& out) {
  const auto m = load_model_arg(model_dir);
  const bool defaults = probes_file.empty();
  const fs::path path = defaults
                            ? resolve_data_dir(g) / "probes_hacking.jsonl"
                            : fs::path(probes_file);
  auto report = hacking_scan(m, read_probe_file(path));
  report.used_shipped_defaults = defaults;

  std::vector<std::string> warnings;
  for (const auto& r : report.results) {
    if (r.infinite_artefact)
      warnings.push_back("dimension " + r.dimension +
                         ": zero-variance deltas, effect size is an infinity "
                         "artefact");
    if (r.undefined)
      warnings.push_back("dimension " + r.dimension +
                         ": all deltas zero, effect size undefined");
  }

  ordered_json summary = make_summary("hack", g);
  summary["config_hash"] = model_config_hash(model_dir);
  summary["model_dir"] = model_dir;
  summary["entries"] = ordered_json::array({hacking_to_json(report)});
  finish_summary(summary, warnings, g, out);
}

void cmd_cascade(const GlobalOptions& g, const std::string& model_dir,
                 const std::string& probes_file, double threshold,
                 const std::string& out) {
  const auto m = load_model_arg(model_dir);
  const bool defaults = probes_file.empty();
  const fs::path path = defaults
                            ? resolve_data_dir(g) / "probes_cascade.jsonl"
                            : fs::path(probes_file);
  const auto report = cascade_detect(m, read_probe_file(path), threshold);

  std::vector<std::string> warnings;
  for (const auto& [a, b] : report.degenerate_pairs)
    warnings.push_back("degenerate correlation between " + a + " and " + b);

  ordered_json summary = make_summary("cascade", g);
  summary["config_hash"] = model_config_hash(model_dir);
  summary["model_dir"] = model_dir;
  summary["entries"] = ordered_json::array({cascade_to_json(report)});
  finish_summary(summary, warnings, g, out);
}

void cmd_distortion(const GlobalOptions& g, const std::string& model_dir,
                    const std::string& probes_file,
                    const std::string& dimensions_csv, int tool_count,
                    const std::string& out) {
  const auto m = load_model_arg(model_dir);
  const fs::path path = probes_file.empty()
                            ? resolve_data_dir(g) / "probes_distortion.jsonl"
                            : fs::path(probes_file);
  const auto tagged = read_tagged_probe_file(path);

  std::vector<DistortionProbeResult> results(tagged.size());
  parallel_for(tagged.size(), [&](std::size_t i) {
    results[i].probe = tagged[i].name;
    results[i].targeted_dimensions = tagged[i].dimensions;
    results[i].delta_r = score(m, tagged[i].prompt, tagged[i].variant_a) -
                         score(m, tagged[i].prompt, tagged[i].variant_b);
  });

  std::vector<std::string> dimensions = parse_string_list(dimensions_csv);
  if (dimensions.empty()) {
    std::set<std::string> tags;
    for (const auto& p : tagged)
      tags.insert(p.dimensions.begin(), p.dimensions.end());
    dimensions.assign(tags.begin(), tags.end());
  }

  auto report = distortion_index(results, dimensions);
  if (tool_count >= 0) report = agentic_amplification(report, tool_count);

  std::vector<std::string> warnings;
  if (report.flat_normalisation)
    warnings.push_back("all probe deltas equal; coverage is uninformative");

  ordered_json summary = make_summary("distortion", g);
  summary["config_hash"] = model_config_hash(model_dir);
  summary["model_dir"] = model_dir;
  summary["entries"] = ordered_json::array({distortion_to_json(report)});
  finish_summary(summary, warnings, g, out);
}

void cmd_conflict(const GlobalOptions& g, const std::string& model_dir,
                  const std::string& terms_file, bool use_objectives,
                  int layer, const std::string& out) {
  const auto m = load_model_arg(model_dir);
  ConflictReport report;
  if (use_objectives) {
    report = analyze_multi_objective_model(m);
  } else {
    const fs::path path = terms_file.empty()
                              ? resolve_data_dir(g) / "terms_default.jsonl"
                              : fs::path(terms_file);
    report = analyze_conflicts_from_pairs(
        m, read_contrastive_file(path),
        layer >= -1 ? std::optional<int>(layer) : std::nullopt);
  }

  ordered_json summary = make_summary("conflict", g);
  summary["config_hash"] = model_config_hash(model_dir);
  summary["model_dir"] = model_dir;
  summary["entries"] = ordered_json::array({conflict_to_json(report)});
  finish_summary(summary, {}, g, out);
}

void cmd_concepts(const GlobalOptions& g, const std::string& model_dir,
                  const std::string& concepts_file, int layer,
                  double threshold, const std::string& hackable_csv,
                  const std::string& out) {
  const auto m = load_model_arg(model_dir);
  const fs::path path = concepts_file.empty()
                            ? resolve_data_dir(g) / "concepts_default.jsonl"
                            : fs::path(concepts_file);
  const auto hackable_list = parse_string_list(hackable_csv);
  const std::set<std::string> hackable(hackable_list.begin(),
                                       hackable_list.end());
  const auto infos = extract_concepts(
      m, read_contrastive_file(path),
      layer >= -1 ? std::optional<int>(layer) : std::nullopt, threshold,
      hackable);

  ordered_json summary = make_summary("concepts", g);
  summary["config_hash"] = model_config_hash(model_dir);
  summary["model_dir"] = model_dir;
  summary["entries"] =
      ordered_json::array({concepts_to_json(infos, threshold)});
  finish_summary(summary, {}, g, out);
}

void cmd_dose_response(const GlobalOptions& g, const std::string& model_dir,
                       const std::string& prompt, const std::string& response,
                       const std::string& concepts_file,
                       const std::string& concept_name, int layer,
                       const std::string& alphas_csv, const std::string& out,
                       const std::string& plot) {
  const auto m = load_model_arg(model_dir);
  const fs::path path = concepts_file.empty()
                            ? resolve_data_dir(g) / "concepts_default.jsonl"
                            : fs::path(concepts_file);
  const auto all_pairs = read_contrastive_file(path);
  require(all_pairs.count(concept_name), ErrorKind::argument,
          "concept '" + concept_name + "' not found in " + path.string());
  ContrastivePairs one;
  one[concept_name] = all_pairs.at(concept_name);
  const auto infos = extract_concepts(m, one);

  const auto alphas =
      alphas_csv.empty() ? default_alpha_grid() : parse_double_list(alphas_csv);
  const auto r = dose_response(
      m, prompt, response, concept_name, infos[0].direction,
      layer >= 0 ? std::optional<int>(layer) : std::nullopt, alphas);

  ordered_json summary = make_summary("dose-response", g);
  summary["config_hash"] = model_config_hash(model_dir);
  summary["model_dir"] = model_dir;
  summary["entries"] = ordered_json::array({dose_response_to_json(r)});
  if (!plot.empty())
    write_text_file(plot, emit_svg(dose_response_to_json(r),
                                   PlotKind::dose_response));
  finish_summary(summary, {}, g, out);
}

void cmd_sae_collect(const GlobalOptions& g, const std::string& model_dir,
                     const std::string& corpus_file, int layer,
                     const std::string& shard_dir, std::size_t shard_rows) {
  const auto m = load_model_arg(model_dir);
  const auto files = collect_activations(m, read_corpus_file(corpus_file),
                                         layer, shard_dir, shard_rows);
  (void)g;
  for (const auto& f : files) std::cout << f.string() << "\n";
}

void cmd_sae_train(const GlobalOptions& g, const std::string& shard_dir,
                   int features, int k, int epochs, double lr, int batch,
                   const std::string& out_state, const std::string& report) {
  const auto shards = load_shards(shard_dir);
  auto state = init_topk_sae(static_cast<int>(shards.rows.cols()), features, k,
                             g.seed);
  SaeTrainOptions opt;
  opt.epochs = epochs;
  opt.lr0 = lr;
  opt.batch_size = batch;
  opt.shuffle_seed = g.seed;
  const auto trace = train_sae(state, shards.rows, opt);
  state.save(out_state);

  if (!report.empty()) {
    ordered_json summary = make_summary("sae-train", g);
    summary["shard_dir"] = shard_dir;
    summary["layer"] = shards.layer;
    summary["n_samples"] = shards.rows.rows();
    summary["n_features"] = features;
    summary["k"] = k;
    summary["epochs"] = epochs;
    summary["lr0"] = lr;
    summary["batch_size"] = batch;
    summary["final_loss"] = trace.empty() ? 0.0 : trace.back();
    summary["entries"] = ordered_json::array({ordered_json{{"loss_trace", trace}}});
    write_json_file(report, summary);
  }
}

void cmd_sae_analyze(const GlobalOptions& g, const std::string& model_dir,
                     const std::string& state_file,
                     const std::string& shard_dir, const std::string& out) {
  const auto m = load_model_arg(model_dir);
  const auto state = TopKSAEState::load(state_file);
  const auto shards = load_shards(shard_dir);
  require(shards.rows.cols() == state.d, ErrorKind::shape_mismatch,
          "sae-analyze: shard width does not match the SAE state");
  const auto infos = analyze_features(state, shards.rows, m.reward_direction());

  // identity check on the first shard row, reported alongside the features
  const Vec x = shards.rows.row(0).transpose();
  const auto dec =
      decompose_reward_for_input(state, x, m.reward_direction(), m.reward_bias());

  ordered_json features = sae_features_to_json(infos, state, shards.layer);
  features["decomposition_check"] = ordered_json{
      {"total", dec.total},
      {"direct", dec.direct},
      {"max_abs_gap", std::fabs(dec.total - dec.direct)}};

  ordered_json summary = make_summary("sae-analyze", g);
  summary["config_hash"] = model_config_hash(model_dir);
  summary["model_dir"] = model_dir;
  summary["entries"] = ordered_json::array({features});
  finish_summary(summary, {}, g, out);
}

void cmd_compare(const GlobalOptions& g,
                 const std::vector<std::string>& model_dirs,
                 const std::string& pairs_file, std::size_t pair_index,
                 bool with_attribution, const std::string& out,
                 const std::string& plot) {
  require(model_dirs.size() >= 2, ErrorKind::argument,
          "compare needs at least two --model directories");
  std::vector<RewardModelBundle> bundles;
  bundles.reserve(model_dirs.size());
  std::vector<std::string> names;
  for (const auto& dir : model_dirs) {
    bundles.push_back(load_model_arg(dir));
    names.push_back(fs::path(dir).filename().string());
  }
  std::vector<const RewardModelBundle*> ptrs;
  for (const auto& b : bundles) ptrs.push_back(&b);

  const auto pairs = read_pair_file(pairs_file);
  require(pair_index < pairs.size(), ErrorKind::argument,
          "pair index out of range");
  const auto result =
      compare(ptrs, names, pairs[pair_index], with_attribution);

  std::vector<std::string> warnings;
  for (std::size_t i = 0; i < result.degenerate_trajectory.size(); ++i)
    if (result.degenerate_trajectory[i])
      warnings.push_back("model " + names[i] +
                         ": degenerate (constant) differential trajectory");

  ordered_json summary = make_summary("compare", g);
  ordered_json hashes = ordered_json::array();
  for (const auto& dir : model_dirs) hashes.push_back(model_config_hash(dir));
  summary["config_hashes"] = std::move(hashes);
  summary["n_pairs"] = pairs.size();
  summary["pair_index"] = pair_index;
  summary["entries"] = ordered_json::array({comparison_to_json(result)});
  if (!plot.empty())
    write_text_file(plot,
                    emit_svg(comparison_to_json(result), PlotKind::overlay));
  finish_summary(summary, warnings, g, out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mechanistic interpretability toolkit for scalar-head reward models"};
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--seed", g.seed, "seed recorded in reports and used by builders/trainers");
  app.add_flag("--strict", g.strict, "escalate numeric degeneracies to exit code 4");
  app.add_option("--data-dir", g.data_dir, "directory with shipped probe/concept data");
  app.add_option("--threads", g.threads, "worker bound (overrides REWARD_LENS_THREADS)");

  std::function<void()> run;

  // build-toy
  {
    auto* c = app.add_subcommand("build-toy", "write a deterministic toy model directory");
    c->fallthrough();
    auto out = std::make_shared<std::string>();
    auto kind = std::make_shared<std::string>("seeded");
    auto layers = std::make_shared<int>(4);
    auto d_model = std::make_shared<int>(64);
    auto heads = std::make_shared<int>(4);
    auto d_mlp = std::make_shared<int>(128);
    auto max_seq = std::make_shared<int>(128);
    auto head = std::make_shared<std::string>("scalar");
    auto objectives = std::make_shared<int>(19);
    auto norm = std::make_shared<std::string>("layernorm");
    auto vocab_file = std::make_shared<std::string>();
    auto vocab_size = std::make_shared<int>(0);
    auto plant_layer = std::make_shared<int>(0);
    auto trigger = std::make_shared<std::string>("t0");
    auto gain = std::make_shared<double>(1.0);
    auto plant_unit = std::make_shared<int>(0);
    c->add_option("--out", *out, "output model directory")->required();
    c->add_option("--kind", *kind, "seeded | planted");
    c->add_option("--layers", *layers, "transformer blocks");
    c->add_option("--d-model", *d_model, "model width");
    c->add_option("--heads", *heads, "attention heads");
    c->add_option("--d-mlp", *d_mlp, "MLP hidden width");
    c->add_option("--max-seq", *max_seq, "maximum sequence length");
    c->add_option("--head", *head, "scalar | multi");
    c->add_option("--objectives", *objectives, "objective count for multi heads");
    c->add_option("--norm", *norm, "layernorm | identity");
    c->add_option("--vocab", *vocab_file, "vocabulary file (one token per line)");
    c->add_option("--vocab-size", *vocab_size, "synthetic vocabulary t0..tN instead of a file");
    c->add_option("--plant-layer", *plant_layer, "planted MLP layer");
    c->add_option("--trigger", *trigger, "planted trigger token");
    c->add_option("--gain", *gain, "planted write gain");
    c->add_option("--plant-unit", *plant_unit, "basis index of the planted direction");
    c->callback([=, &g, &run] {
      run = [=, &g] {
        cmd_build_toy(g, *out, *kind, *layers, *d_model, *heads, *d_mlp,
                      *max_seq, *head, *objectives, *norm, *vocab_file,
                      *vocab_size, *plant_layer, *trigger, *gain, *plant_unit);
      };
    });
  }

  // score
  {
    auto* c = app.add_subcommand("score", "score one (prompt, response) pair");
    c->fallthrough();
    auto model = std::make_shared<std::string>();
    auto prompt = std::make_shared<std::string>();
    auto response = std::make_shared<std::string>();
    c->add_option("--model", *model, "model directory")->required();
    c->add_option("--prompt", *prompt, "prompt text")->required();
    c->add_option("--response", *response, "response text")->required();
    c->callback([=, &run] {
      run = [=] { cmd_score(*model, *prompt, *response); };
    });
  }

  // lens
  {
    auto* c = app.add_subcommand("lens", "per-layer reward lens over preference pairs");
    c->fallthrough();
    auto model = std::make_shared<std::string>();
    auto pairs = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto plot = std::make_shared<std::string>();
    auto index = std::make_shared<std::size_t>(0);
    c->add_option("--model", *model)->required();
    c->add_option("--pairs", *pairs, "preference pairs (JSONL)")->required();
    c->add_option("--out", *out, "run summary JSON")->required();
    c->add_option("--plot", *plot, "trajectory SVG path");
    c->add_option("--pair-index", *index, "which pair to plot");
    c->callback([=, &g, &run] {
      run = [=, &g] { cmd_lens(g, *model, *pairs, *out, *plot, *index); };
    });
  }

  // attribute
  {
    auto* c = app.add_subcommand("attribute", "exact per-component reward decomposition");
    c->fallthrough();
    auto model = std::make_shared<std::string>();
    auto pairs = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto plot = std::make_shared<std::string>();
    auto plot_kind = std::make_shared<std::string>("topk-bar");
    auto index = std::make_shared<std::size_t>(0);
    c->add_option("--model", *model)->required();
    c->add_option("--pairs", *pairs)->required();
    c->add_option("--out", *out)->required();
    c->add_option("--plot", *plot, "SVG path");
    c->add_option("--plot-kind", *plot_kind, "topk-bar | heatmap");
    c->add_option("--pair-index", *index, "which pair to plot");
    c->callback([=, &g, &run] {
      run = [=, &g] {
        cmd_attribute(g, *model, *pairs, *out, *plot, *plot_kind, *index);
      };
    });
  }

  // patch
  {
    auto* c = app.add_subcommand("patch", "causal activation patching over all sublayers");
    c->fallthrough();
    auto model = std::make_shared<std::string>();
    auto pairs = std::make_shared<std::string>();
    auto mode = std::make_shared<std::string>("noising");
    auto out = std::make_shared<std::string>();
    auto plot = std::make_shared<std::string>();
    auto index = std::make_shared<std::size_t>(0);
    c->add_option("--model", *model)->required();
    c->add_option("--pairs", *pairs)->required();
    c->add_option("--mode", *mode, "noising | denoising | zero");
    c->add_option("--out", *out)->required();
    c->add_option("--plot", *plot, "top effects SVG path");
    c->add_option("--pair-index", *index);
    c->callback([=, &g, &run] {
      run = [=, &g] { cmd_patch(g, *model, *pairs, *mode, *out, *plot, *index); };
    });
  }

  // divergence-patch
  {
    auto* c = app.add_subcommand("divergence-patch",
    c->fallthrough();
                                 "patching with Mahalanobis divergence screening");
    auto model = std::make_shared<std::string>();
    auto pairs = std::make_shared<std::string>();
    auto corpus = std::make_shared<std::string>();
    auto mode = std::make_shared<std::string>("noising");
    auto threshold = std::make_shared<double>(2.0);
    auto constrained = std::make_shared<bool>(false);
    auto out = std::make_shared<std::string>();
    auto save_est = std::make_shared<std::string>();
    auto load_est = std::make_shared<std::string>();
    c->add_option("--model", *model)->required();
    c->add_option("--pairs", *pairs)->required();
    c->add_option("--corpus", *corpus, "clean (prompt, response) corpus JSONL");
    c->add_option("--mode", *mode);
    c->add_option("--threshold", *threshold, "divergence threshold in sigma units");
    c->add_flag("--constrained", *constrained, "shrink divergent activations to the threshold shell");
    c->add_option("--out", *out)->required();
    c->add_option("--save-estimator", *save_est, "persist the fitted estimator");
    c->add_option("--load-estimator", *load_est, "reuse a fitted estimator");
    c->callback([=, &g, &run] {
      run = [=, &g] {
        cmd_divergence_patch(g, *model, *pairs, *corpus, *mode, *threshold,
                             *constrained, *out, *save_est, *load_est);
      };
    });
  }

  // hack
  {
    auto* c = app.add_subcommand("hack", "bias probe scan with Cohen's d per dimension");
    c->fallthrough();
    auto model = std::make_shared<std::string>();
    auto probes = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    c->add_option("--model", *model)->required();
    c->add_option("--probes", *probes, "probe JSONL (default: shipped set)");
    c->add_option("--out", *out)->required();
    c->callback([=, &g, &run] {
      run = [=, &g] { cmd_hack(g, *model, *probes, *out); };
    });
  }

  // cascade
  {
    auto* c = app.add_subcommand("cascade", "correlated-misalignment cascade detector");
    c->fallthrough();
    auto model = std::make_shared<std::string>();
    auto probes = std::make_shared<std::string>();
    auto threshold = std::make_shared<double>(0.5);
    auto out = std::make_shared<std::string>();
    c->add_option("--model", *model)->required();
    c->add_option("--probes", *probes, "probe JSONL (default: shipped set)");
    c->add_option("--threshold", *threshold, "correlation threshold");
    c->add_option("--out", *out)->required();
    c->callback([=, &g, &run] {
      run = [=, &g] { cmd_cascade(g, *model, *probes, *threshold, *out); };
    });
  }

  // distortion
  {
    auto* c = app.add_subcommand("distortion", "per-dimension evaluation coverage analysis");
    c->fallthrough();
    auto model = std::make_shared<std::string>();
    auto probes = std::make_shared<std::string>();
    auto dims = std::make_shared<std::string>();
    auto tools = std::make_shared<int>(-1);
    auto out = std::make_shared<std::string>();
    c->add_option("--model", *model)->required();
    c->add_option("--probes", *probes, "tagged probe JSONL (default: shipped set)");
    c->add_option("--dimensions", *dims, "comma-separated dimension list");
    c->add_option("--tool-count", *tools, "apply agentic amplification for T tools");
    c->add_option("--out", *out)->required();
    c->callback([=, &g, &run] {
      run = [=, &g] { cmd_distortion(g, *model, *probes, *dims, *tools, *out); };
    });
  }

  // conflict
  {
    auto* c = app.add_subcommand("conflict", "reward-term geometry classification");
    c->fallthrough();
    auto model = std::make_shared<std::string>();
    auto terms = std::make_shared<std::string>();
    auto use_obj = std::make_shared<bool>(false);
    auto layer = std::make_shared<int>(-2);
    auto out = std::make_shared<std::string>();
    c->add_option("--model", *model)->required();
    c->add_option("--terms", *terms, "contrastive term pairs JSONL (default: shipped set)");
    c->add_flag("--use-objectives", *use_obj, "analyse a multi-objective head's rows directly");
    c->add_option("--layer", *layer, "extraction layer (default: final)");
    c->add_option("--out", *out)->required();
    c->callback([=, &g, &run] {
      run = [=, &g] { cmd_conflict(g, *model, *terms, *use_obj, *layer, *out); };
    });
  }

  // concepts
  {
    auto* c = app.add_subcommand("concepts", "concept vectors with reward alignment");
    c->fallthrough();
    auto model = std::make_shared<std::string>();
    auto concepts = std::make_shared<std::string>();
    auto layer = std::make_shared<int>(-2);
    auto threshold = std::make_shared<double>(0.2);
    auto hackable = std::make_shared<std::string>("verbosity,agreement");
    auto out = std::make_shared<std::string>();
    c->add_option("--model", *model)->required();
    c->add_option("--concepts", *concepts, "contrastive concept pairs JSONL (default: shipped set)");
    c->add_option("--layer", *layer, "extraction layer (default: final)");
    c->add_option("--alignment-threshold", *threshold);
    c->add_option("--hackable", *hackable, "comma-separated hackable concept names");
    c->add_option("--out", *out)->required();
    c->callback([=, &g, &run] {
      run = [=, &g] {
        cmd_concepts(g, *model, *concepts, *layer, *threshold, *hackable, *out);
      };
    });
  }

  // dose-response
  {
    auto* c = app.add_subcommand("dose-response",
    c->fallthrough();
                                 "reward response to residual-stream concept addition");
    auto model = std::make_shared<std::string>();
    auto prompt = std::make_shared<std::string>();
    auto response = std::make_shared<std::string>();
    auto concepts = std::make_shared<std::string>();
    auto concept_name = std::make_shared<std::string>();
    auto layer = std::make_shared<int>(-1);
    auto alphas = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto plot = std::make_shared<std::string>();
    c->add_option("--model", *model)->required();
    c->add_option("--prompt", *prompt)->required();
    c->add_option("--response", *response)->required();
    c->add_option("--concepts", *concepts, "contrastive concept pairs JSONL");
    c->add_option("--concept", *concept_name, "concept name to intervene on")->required();
    c->add_option("--layer", *layer, "intervention layer (default: final)");
    c->add_option("--alphas", *alphas, "comma-separated grid");
    c->add_option("--out", *out)->required();
    c->add_option("--plot", *plot, "dose-response SVG path");
    c->callback([=, &g, &run] {
      run = [=, &g] {
        cmd_dose_response(g, *model, *prompt, *response, *concepts,
                          *concept_name, *layer, *alphas, *out, *plot);
      };
    });
  }

  // sae-collect
  {
    auto* c = app.add_subcommand("sae-collect", "stream residual activations to shards");
    c->fallthrough();
    auto model = std::make_shared<std::string>();
    auto corpus = std::make_shared<std::string>();
    auto layer = std::make_shared<int>(-1);
    auto dir = std::make_shared<std::string>();
    auto rows = std::make_shared<std::size_t>(4096);
    c->add_option("--model", *model)->required();
    c->add_option("--corpus", *corpus, "(prompt, response) corpus JSONL")->required();
    c->add_option("--layer", *layer, "residual layer (-1 for the embedding stream)");
    c->add_option("--shard-dir", *dir)->required();
    c->add_option("--shard-rows", *rows, "max rows per shard");
    c->callback([=, &g, &run] {
      run = [=, &g] { cmd_sae_collect(g, *model, *corpus, *layer, *dir, *rows); };
    });
  }

  // sae-train
  {
    auto* c = app.add_subcommand("sae-train", "train a TopK SAE on collected shards");
    c->fallthrough();
    auto dir = std::make_shared<std::string>();
    auto features = std::make_shared<int>(64);
    auto k = std::make_shared<int>(8);
    auto epochs = std::make_shared<int>(10);
    auto lr = std::make_shared<double>(1e-3);
    auto batch = std::make_shared<int>(256);
    auto out = std::make_shared<std::string>();
    auto report = std::make_shared<std::string>();
    c->add_option("--shard-dir", *dir)->required();
    c->add_option("--features", *features, "dictionary size");
    c->add_option("--k", *k, "active features per input");
    c->add_option("--epochs", *epochs);
    c->add_option("--lr", *lr, "peak learning rate");
    c->add_option("--batch", *batch);
    c->add_option("--out", *out, "trained SAE state file")->required();
    c->add_option("--report", *report, "loss-trace JSON");
    c->callback([=, &g, &run] {
      run = [=, &g] {
        cmd_sae_train(g, *dir, *features, *k, *epochs, *lr, *batch, *out,
                      *report);
      };
    });
  }

  // sae-analyze
  {
    auto* c = app.add_subcommand("sae-analyze", "reward-aligned SAE feature analysis");
    c->fallthrough();
    auto model = std::make_shared<std::string>();
    auto state = std::make_shared<std::string>();
    auto dir = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    c->add_option("--model", *model)->required();
    c->add_option("--sae", *state, "trained SAE state file")->required();
    c->add_option("--shard-dir", *dir)->required();
    c->add_option("--out", *out)->required();
    c->callback([=, &g, &run] {
      run = [=, &g] { cmd_sae_analyze(g, *model, *state, *dir, *out); };
    });
  }

  // compare
  {
    auto* c = app.add_subcommand("compare", "cross-model formation comparison");
    c->fallthrough();
    auto models = std::make_shared<std::vector<std::string>>();
    auto pairs = std::make_shared<std::string>();
    auto index = std::make_shared<std::size_t>(0);
    auto with_attr = std::make_shared<bool>(false);
    auto out = std::make_shared<std::string>();
    auto plot = std::make_shared<std::string>();
    c->add_option("--model", *models, "model directory (repeat for each model)")
        ->required()
        ->expected(-1);
    c->add_option("--pairs", *pairs)->required();
    c->add_option("--pair-index", *index, "which pair to compare");
    c->add_flag("--with-attribution", *with_attr);
    c->add_option("--out", *out)->required();
    c->add_option("--plot", *plot, "overlay SVG path");
    c->callback([=, &g, &run] {
      run = [=, &g] {
        cmd_compare(g, *models, *pairs, *index, *with_attr, *out, *plot);
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (g.threads > 0)
    setenv("REWARD_LENS_THREADS", std::to_string(g.threads).c_str(), 1);

  try {
    if (run) run();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
