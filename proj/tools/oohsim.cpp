#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "oohsim/cost_model.hpp"
#include "oohsim/experiment.hpp"
#include "oohsim/repro.hpp"

using namespace oohsim;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

/// OOHSIM_CALIBRATION wins over the config file; built-in defaults otherwise.
CostTable load_costs(const std::optional<fs::path>& from_config)
{
    if (const char* env = std::getenv("OOHSIM_CALIBRATION"); env != nullptr && *env != '\0') {
        return CostTable::load(env);
    }
    if (from_config) {
        return CostTable::load(*from_config);
    }
    return CostTable::defaults();
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

void print_written(const std::vector<fs::path>& paths)
{
    for (const auto& p : paths) {
        std::cout << p.string() << '\n';
    }
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Discrete-event simulator of dirty page tracking techniques"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run one experiment from a JSON config");
    std::string run_config;
    std::string run_out;
    std::optional<std::uint64_t> run_seed;
    run->add_option("--config", run_config, "Experiment config (JSON)")->required();
    run->add_option("--out", run_out, "Output directory (overrides output.dir)");
    run->add_option("--seed", run_seed, "Seed (overrides the config)");

    auto* sweep = app.add_subcommand("sweep", "Cross product of sizes and techniques");
    std::string sweep_sizes = "1MB,10MB,50MB,100MB,250MB,500MB,1GB";
    std::string sweep_techs = "proc,uffd,spml,epml";
    std::string sweep_workload = "microbench";
    std::uint32_t sweep_rounds = 1;
    std::uint64_t sweep_seed = 1;
    std::string sweep_out = ".";
    std::string sweep_formats = "csv";
    bool sweep_checkpoint = false;
    sweep->add_option("--sizes", sweep_sizes, "Comma-separated memory sizes");
    sweep->add_option("--techniques", sweep_techs, "Comma-separated techniques");
    sweep->add_option("--workload", sweep_workload, "microbench, kv or churn");
    sweep->add_option("--rounds", sweep_rounds, "Micro-benchmark rounds");
    sweep->add_option("--seed", sweep_seed, "Seed");
    sweep->add_option("--out", sweep_out, "Output directory");
    sweep->add_option("--formats", sweep_formats, "Comma-separated: csv, json, plotdata");
    sweep->add_flag("--checkpoint", sweep_checkpoint, "Checkpoint at the end of each run");

    auto* calibrate = app.add_subcommand("calibrate", "Show or validate a calibration");
    std::string cal_file;
    std::string cal_out;
    calibrate->add_option("--file", cal_file, "Calibration file to validate and show");
    calibrate->add_option("--out", cal_out, "Write the effective calibration here");

    auto* report = app.add_subcommand("report", "Convert a JSON report to other formats");
    std::string rep_in;
    std::string rep_out = ".";
    std::string rep_formats = "csv,json,plotdata";
    report->add_option("--input", rep_in, "report.json produced by run or sweep")->required();
    report->add_option("--out", rep_out, "Output directory");
    report->add_option("--formats", rep_formats, "Comma-separated: csv, json, plotdata");

    auto* repro = app.add_subcommand("repro", "Reproduce a published table or figure");
    std::string figure;
    std::string repro_out = "repro";
    repro->add_option("--figure", figure, "table1, table5, fig6, fig8, fig9 or coexist")
        ->required();
    repro->add_option("--out", repro_out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) {
            ExperimentConfig cfg = ExperimentConfig::load(run_config);
            if (run_seed) {
                cfg.seed = *run_seed;
            }
            const CostTable costs = load_costs(cfg.calibration);
            const RunReport rep = run_experiment(cfg, costs);
            const fs::path out = !run_out.empty() ? fs::path(run_out)
                                                  : cfg.output_dir.value_or(fs::path("."));
            print_written(emit_reports(rep, cfg.formats, out));
        } else if (*sweep) {
            nlohmann::json j;
            j["seed"] = sweep_seed;
            j["memory_sizes"] = split_list(sweep_sizes);
            j["techniques"] = split_list(sweep_techs);
            j["workload"] = {{"kind", sweep_workload}, {"rounds", sweep_rounds},
                             {"checkpoint", sweep_checkpoint}};
            j["output"] = {{"formats", split_list(sweep_formats)}};
            const ExperimentConfig cfg = ExperimentConfig::from_json(j.dump());
            const CostTable costs = load_costs(std::nullopt);
            print_written(emit_reports(run_experiment(cfg, costs), cfg.formats, sweep_out));
        } else if (*calibrate) {
            const CostTable costs =
                cal_file.empty() ? load_costs(std::nullopt) : CostTable::load(cal_file);
            if (cal_out.empty()) {
                costs.write(std::cout);
            } else {
                std::ostringstream ss;
                costs.write(ss);
                write_text(cal_out, ss.str());
                std::cout << cal_out << '\n';
            }
        } else if (*report) {
            std::ifstream in(rep_in);
            if (!in) {
                throw IoError("cannot read " + rep_in);
            }
            std::stringstream ss;
            ss << in.rdbuf();
            std::vector<ReportFormat> formats;
            for (const auto& f : split_list(rep_formats)) {
                formats.push_back(report_format_from_string(f, "--formats"));
            }
            print_written(emit_reports(parse_report_json(ss.str()), formats, rep_out));
        } else if (*repro) {
            const CostTable costs = load_costs(std::nullopt);
            const auto rows = run_repro(figure, costs);
            const std::string csv = format_repro_csv(rows);
            const fs::path out = fs::path(repro_out) / (figure + ".csv");
            write_text(out, csv);
            std::cout << csv;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const CalibrationError& e) {
        std::cerr << "calibration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const UnknownFigure& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kExitIo;
    } catch (const SimError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitOk;
}
