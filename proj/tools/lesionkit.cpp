// Command-line front end for the lesionkit pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <iostream>
#include <nlohmann/json.hpp>

#include "lesionkit/error.hpp"
#include "lesionkit/pipeline.hpp"
#include "lesionkit/util.hpp"

namespace fs = std::filesystem;
using namespace lesionkit;
using pipeline::Stage;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

void add_common(CLI::App* app, Common& c, bool need_out = true) {
  app->add_option("--config", c.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  auto* o = app->add_option("--out", c.out, "Output directory");
  if (need_out) o->required();
  app->add_option("--seed", c.seed, "Override the configured seed");
  app->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
}

pipeline::RunConfig resolve(const Common& c) {
  auto cfg = c.config.empty() ? pipeline::RunConfig::from_json("{}") : pipeline::RunConfig::load(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.jobs) cfg.jobs = *c.jobs;
  return cfg;
}

void print(const pipeline::StageResult& r) {
  for (const auto& l : r.lines) std::cout << l << "\n";
}

// Manifest for commands that work outside the stage layout.
void write_manifest(const fs::path& path, const std::string& command, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs) {
  nlohmann::ordered_json m;
  m["command"] = command;
  auto& in = m["inputs"] = nlohmann::ordered_json::object();
  for (const auto& p : inputs) in[p.generic_string()] = sha256_file(p);
  auto& out = m["outputs"] = nlohmann::ordered_json::object();
  for (const auto& p : outputs) out[p.generic_string()] = sha256_file(p);
  write_text_file(path, m.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lesionkit: volumetric lesion classification on mpMRI-like data"};
  app.require_subcommand(1);

  Common common;
  std::map<CLI::App*, Stage> stage_cmds;
  const std::vector<std::pair<Stage, std::string>> stages = {
      {Stage::Phantom, "Generate the synthetic phantom cohort"},
      {Stage::Preprocess, "Resample to isotropic voxels, refine lesion centers, split cases"},
      {Stage::Augment, "Cut multi-view training and validation patches"},
      {Stage::Features, "Extract the 87 radiomics features per lesion"},
      {Stage::TrainCnn, "Train one XmasNet per channel set (and replica)"},
      {Stage::TrainGbm, "Run the boosted-tree model zoo"},
      {Stage::SelectEnsemble, "Greedy ensemble selection on validation predictions"},
  };
  for (const auto& [s, help] : stages) {
    auto* sub = app.add_subcommand(pipeline::stage_name(s), help);
    add_common(sub, common);
    stage_cmds[sub] = s;
  }

  auto* run = app.add_subcommand("run", "Run every stage in order (completed stages are skipped)");
  add_common(run, common);

  std::string model, archive, output;
  auto* predict = app.add_subcommand("predict", "Score lesions with the selected ensemble, or one CNN on an archive");
  add_common(predict, common, false);
  predict->add_option("--model", model, "XmasNet model manifest")->check(CLI::ExistingFile);
  predict->add_option("--archive", archive, "Sample archive manifest")->check(CLI::ExistingFile);
  predict->add_option("--output", output, "Predictions CSV (model mode)");

  std::string predictions, labels;
  auto* evaluate = app.add_subcommand("evaluate", "Lesion-level AUC and ROC curves");
  add_common(evaluate, common, false);
  evaluate->add_option("--predictions", predictions, "Predictions CSV")->check(CLI::ExistingFile);
  evaluate->add_option("--labels", labels, "Findings CSV with labels")->check(CLI::ExistingFile);

  std::vector<std::string> plot_inputs;
  auto* roc = app.add_subcommand("roc-plot", "ROC curves of several prediction files as one SVG");
  roc->add_option("--predictions", plot_inputs, "Predictions CSV files")->required()->check(CLI::ExistingFile);
  roc->add_option("--labels", labels, "Findings CSV with labels")->required()->check(CLI::ExistingFile);
  roc->add_option("--output", output, "SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return e.get_exit_code() == 0 ? rc : 1;
  }

  try {
    for (const auto& [sub, stage] : stage_cmds) {
      if (!sub->parsed()) continue;
      print(pipeline::run_stage(stage, resolve(common), common.out));
      return 0;
    }
    if (run->parsed()) {
      for (const auto& r : pipeline::run_all(resolve(common), common.out)) print(r);
      return 0;
    }
    if (predict->parsed()) {
      if (model.empty() != archive.empty()) throw CLI::ValidationError("--model and --archive go together");
      if (model.empty()) {
        if (common.out.empty()) throw CLI::ValidationError("--out is required");
        print(pipeline::run_stage(Stage::Predict, resolve(common), common.out));
        return 0;
      }
      if (output.empty()) throw CLI::ValidationError("--output is required with --model");
      const auto cfg = resolve(common);
      const auto net = xmasnet::load_model(model);
      const auto set = augment::read_archive(archive);
      const auto probs = xmasnet::predict(net.params, set, cfg.jobs);
      ensemble::write_predictions_csv(xmasnet::to_view_predictions(fs::path(model).stem().string(), set, probs), output);
      write_manifest(output + ".manifest.json", "predict", {model, archive}, {output});
      std::cout << probs.size() << " samples scored\n";
      return 0;
    }
    if (evaluate->parsed()) {
      if (predictions.empty()) {
        if (common.out.empty()) throw CLI::ValidationError("--out is required");
        print(pipeline::run_stage(Stage::Evaluate, resolve(common), common.out));
        return 0;
      }
      if (labels.empty() || common.out.empty()) throw CLI::ValidationError("--predictions needs --labels and --out");
      const auto reports = pipeline::evaluate_predictions(predictions, labels, common.out);
      std::vector<fs::path> outs;
      for (const auto& e : fs::directory_iterator(common.out))
        if (e.is_regular_file() && e.path().filename() != "run_manifest.json") outs.push_back(e.path());
      std::sort(outs.begin(), outs.end());
      write_manifest(fs::path(common.out) / "run_manifest.json", "evaluate", {predictions, labels}, outs);
      char buf[64];
      for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%.4f", r.auc);
        std::cout << r.name << " AUC " << buf << " (" << r.lesions << " lesions)\n";
      }
      return 0;
    }
    if (roc->parsed()) {
      std::vector<fs::path> in(plot_inputs.begin(), plot_inputs.end());
      pipeline::roc_plot(in, labels, output);
      in.emplace_back(labels);
      write_manifest(output + ".manifest.json", "roc-plot", in, {output});
      std::cout << "wrote " << output << "\n";
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const pipeline::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return category(e.code()) == ErrorCategory::Numeric ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
