#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dln/experiment.hpp"

namespace {

/// A config argument is either a file path or the name of a shipped preset.
std::string resolve_config_text(const std::string& arg) {
  if (std::filesystem::exists(arg)) {
    std::ifstream in(arg);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  const auto& presets = dln::preset_configs();
  const auto it = presets.find(arg);
  if (it != presets.end()) return it->second;
  throw std::runtime_error("no such config file or preset: " + arg);
}

std::string apply_overrides(std::string text,
                            const std::vector<std::string>& sets,
                            const std::string& out_dir) {
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("--set expects key=value, got: " + kv);
    text += "\n" + kv.substr(0, eq) + " = " + kv.substr(eq + 1);
  }
  if (!out_dir.empty()) text += "\nout_dir = " + out_dir;
  return text + "\n";
}

int report_problems(const dln::ValidationReport& report) {
  for (const auto& e : report.errors) std::cerr << "error: " << e << "\n";
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  return report.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dln - robust sparse regression with deep diagonal linear networks"};
  app.require_subcommand(1);

  std::string config_arg;
  std::vector<std::string> overrides;
  std::string out_dir;

  auto* run_cmd = app.add_subcommand("run", "run an experiment config or preset");
  run_cmd->add_option("config", config_arg, "config file or preset name")->required();
  run_cmd->add_option("--set", overrides, "override a config key (key=value)");
  run_cmd->add_option("--out", out_dir, "override the output directory");

  auto* validate_cmd =
      app.add_subcommand("validate", "check a config without running it");
  validate_cmd->add_option("config", config_arg, "config file or preset name")->required();
  validate_cmd->add_option("--set", overrides, "override a config key (key=value)");

  std::string show_name;
  std::string write_dir;
  auto* presets_cmd = app.add_subcommand("presets", "list shipped preset configs");
  presets_cmd->add_option("--show", show_name, "print one preset to stdout");
  presets_cmd->add_option("--write-all", write_dir, "write every preset into a directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (presets_cmd->parsed()) {
      const auto& presets = dln::preset_configs();
      if (!show_name.empty()) {
        const auto it = presets.find(show_name);
        if (it == presets.end()) {
          std::cerr << "error: no preset named " << show_name << "\n";
          return 1;
        }
        std::cout << it->second;
        return 0;
      }
      if (!write_dir.empty()) {
        std::filesystem::create_directories(write_dir);
        for (const auto& [name, text] : presets) {
          std::ofstream out(std::filesystem::path(write_dir) / (name + ".cfg"));
          out << text;
        }
      }
      for (const auto& [name, text] : presets) {
        const auto nl = text.find('\n');
        std::string first_line = text.substr(0, nl);
        if (first_line.rfind("# ", 0) == 0) first_line = first_line.substr(2);
        std::printf("%-18s %s\n", name.c_str(), first_line.c_str());
      }
      return 0;
    }

    const std::string text =
        apply_overrides(resolve_config_text(config_arg), overrides, out_dir);
    dln::ValidationReport report;
    const dln::ExperimentConfig config = dln::parse_config_text(text, report);

    if (validate_cmd->parsed()) {
      const int rc = report_problems(report);
      if (rc == 0) std::cout << "ok\n";
      return rc;
    }

    if (!report.ok()) return report_problems(report);
    report_problems(report);  // surfaces warnings

    const dln::ExperimentResult result = dln::run_experiment(config);
    std::cout << "wrote " << result.files.size() << " files, summary at "
              << result.summary_path.string() << "\n";
    if (result.any_diverged) {
      std::cerr << "warning: at least one run hit the divergence guard\n";
      return 2;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
