// roadsynth command line: runs pipeline stages, dumps configuration and
// generates the synthetic toy capture.

#include "roadsynth/config.hpp"
#include "roadsynth/error.hpp"
#include "roadsynth/io.hpp"
#include "roadsynth/pipeline.hpp"
#include "roadsynth/synth.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>
#include <optional>

using namespace roadsynth;

namespace {

struct StageArgs {
    std::string config;
    std::string stage_dir;
    std::optional<std::uint64_t> seed;
    std::string report;
    bool force = false;
};

void add_stage_flags(CLI::App* cmd, StageArgs& a) {
    cmd->add_option("--config", a.config, "pipeline configuration (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--stage-dir", a.stage_dir, "output root holding one directory per stage (overrides output_root)");
    cmd->add_option("--seed", a.seed, "overrides the configured seed");
    cmd->add_option("--report", a.report, "write a JSON report to this path");
    cmd->add_flag("--force", a.force, "rerun stages even when their outputs are up to date");
}

PipelineConfig resolve(const StageArgs& a) {
    PipelineConfig c = load_config(a.config);
    if (!a.stage_dir.empty()) c.output_root = a.stage_dir;
    if (a.seed) c.seed = *a.seed;
    return c;
}

void write_report(const std::string& path, const std::string& text) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write report " + path);
    out << text << "\n";
}

std::string error_report(const std::string& command, const Error& e) {
    return nlohmann::ordered_json{{"status", "error"}, {"command", command}, {"code", to_string(e.code())}, {"error", e.what()}}
        .dump(2);
}

std::string stage_report(const StageReport& s) {
    PipelineReport r;
    r.stages.push_back(s);
    return report_to_json(r);
}

int generate_toy(const std::string& out, std::size_t frames, std::uint64_t seed, const std::string& config_path) {
    ToyScene scene = ToyScene::standard();
    scene.frames = frames;
    scene.seed = seed;
    const fs::path root(out);
    write_dataset(root / "data", {generate_toy_fragment(scene, "toy")});
    std::cerr << "[roadsynth] wrote " << frames << " frames to " << (root / "data").string() << "\n";
    if (config_path.empty()) return 0;
    // Reference renders of the analytic scene for every configured sensor.
    const PipelineConfig c = load_config(config_path);
    for (const auto& sc : c.render.sensors) {
        const SensorModel sensor = sc.model();
        std::vector<RenderedFrame> refs;
        if (c.render.frames.empty()) {
            for (std::size_t f = 0; f < frames; ++f) refs.push_back(render_reference(scene, sensor, f));
        } else {
            for (const auto f : c.render.frames) refs.push_back(render_reference(scene, sensor, static_cast<std::size_t>(f)));
        }
        write_rendered(root / "reference" / sc.name, sensor, refs);
        std::cerr << "[roadsynth] wrote reference renders for sensor " << sc.name << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"roadsynth: cross-view LiDAR synthesis from vehicle-side captures"};
    app.require_subcommand(1);

    StageArgs pipe_args;
    CLI::App* pipe = app.add_subcommand("pipeline", "run every stage in order");
    add_stage_flags(pipe, pipe_args);

    std::map<std::string, StageArgs> stage_args;
    std::map<std::string, CLI::App*> stage_cmds;
    for (const auto& name : stage_names()) {
        stage_cmds[name] = app.add_subcommand(name, "run the " + name + " stage only");
        add_stage_flags(stage_cmds[name], stage_args[name]);
    }

    bool dump_defaults = false;
    std::string check_path;
    CLI::App* cfg = app.add_subcommand("config", "inspect configuration");
    cfg->add_flag("--dump-defaults", dump_defaults, "print the default configuration");
    cfg->add_option("--check", check_path, "parse and validate a configuration file")->check(CLI::ExistingFile);

    std::string toy_out;
    std::size_t toy_frames = 20;
    std::uint64_t toy_seed = 0;
    std::string toy_config;
    CLI::App* toy = app.add_subcommand("toy-scene", "write the synthetic two-car capture (and optional reference renders)");
    toy->add_option("--out", toy_out, "output directory")->required();
    toy->add_option("--frames", toy_frames, "number of frames");
    toy->add_option("--seed", toy_seed, "range-noise seed");
    toy->add_option("--config", toy_config, "render the analytic scene with these sensors into <out>/reference")
        ->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    const std::string command = app.get_subcommands().front()->get_name();
    std::string report_path;
    try {
        if (cfg->parsed()) {
            if (dump_defaults) std::cout << config_to_json(PipelineConfig::defaults()) << "\n";
            if (!check_path.empty()) {
                validate_config(load_config(check_path), true);
                std::cerr << "[roadsynth] " << check_path << " is valid\n";
            }
            if (!dump_defaults && check_path.empty()) std::cout << cfg->help();
            return 0;
        }
        if (toy->parsed()) return generate_toy(toy_out, toy_frames, toy_seed, toy_config);
        if (pipe->parsed()) {
            report_path = pipe_args.report;
            RunOptions opt;
            opt.force = pipe_args.force;
            const PipelineReport rep = run_pipeline(resolve(pipe_args), opt);
            write_report(report_path, report_to_json(rep));
            return 0;
        }
        for (const auto& [name, cmd] : stage_cmds) {
            if (!cmd->parsed()) continue;
            const StageArgs& a = stage_args.at(name);
            report_path = a.report;
            RunOptions opt;
            opt.force = a.force;
            write_report(report_path, stage_report(run_stage(resolve(a), name, opt)));
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "[roadsynth] error: " << e.what() << "\n";
        try {
            write_report(report_path, error_report(command, e));
        } catch (const Error&) {
        }
        return e.code() == ErrorCode::StageFailed ? 3 : 2;
    } catch (const std::exception& e) {
        std::cerr << "[roadsynth] error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
