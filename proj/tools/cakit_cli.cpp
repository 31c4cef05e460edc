// cakit: concept-saliency engine and segmentation evaluation CLI.
//
// Exit codes: 0 success, 1 usage error, 2 data/shape error.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cakit/pipeline.hpp"

namespace {

cakit::ConceptVocabulary parse_vocab(const std::string& concepts, const std::string& background) {
    std::vector<std::string> list = cakit::split_commas(concepts);
    std::vector<std::string> bg = cakit::split_commas(background);
    return cakit::ConceptVocabulary(list, {bg.begin(), bg.end()});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Concept-saliency engine and zero-shot segmentation harness"};
    app.require_subcommand(1);

    uint64_t seed = cakit::default_seed();

    // gen-weights
    auto* gen = app.add_subcommand("gen-weights", "Generate a deterministic CAW1 weight file");
    cakit::ModelConfig config;
    std::string gen_out = "weights.caw";
    gen->add_option("--d-model", config.d_model);
    gen->add_option("--heads", config.n_heads);
    gen->add_option("--layers", config.n_layers);
    gen->add_option("--img-h", config.img_h);
    gen->add_option("--img-w", config.img_w);
    gen->add_option("--prompt-len", config.prompt_len);
    gen->add_option("--mlp-ratio", config.mlp_ratio);
    gen->add_option("--seed", seed);
    gen->add_option("--out", gen_out);

    // run
    auto* run = app.add_subcommand("run", "Compute concept saliency maps for one image");
    std::string run_weights, run_prompt, run_concepts, run_background, run_layers = "all";
    std::string run_space = "output", run_softmax = "on", run_head_agg = "concat";
    std::string run_image, run_out = "out";
    double run_timestep = 500.0;
    bool run_synthetic = false;
    run->add_option("--weights", run_weights)->required();
    run->add_option("--prompt", run_prompt, "space-separated prompt tokens")->required();
    run->add_option("--concepts", run_concepts, "comma-separated concept tokens")->required();
    run->add_option("--background", run_background, "comma-separated background concepts");
    run->add_option("--timestep", run_timestep);
    run->add_option("--layers", run_layers, "layer subset: all, N, A-B, or comma list");
    run->add_option("--space", run_space)->check(CLI::IsMember({"ca", "value", "output"}));
    run->add_option("--softmax", run_softmax)->check(CLI::IsMember({"on", "off"}));
    run->add_option("--head-agg", run_head_agg)->check(CLI::IsMember({"concat", "mean"}));
    run->add_option("--seed", seed);
    run->add_option("--out", run_out);
    run->add_option("--image", run_image, "input image as 8-bit PGM");
    run->add_flag("--synthetic", run_synthetic, "use seeded synthetic image tokens");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate CAS1 score files against PGM masks");
    std::string eval_manifest, eval_mode = "single";
    std::string eval_json = "report.json", eval_csv = "report.csv";
    eval->add_option("--manifest", eval_manifest)->required();
    eval->add_option("--mode", eval_mode)->check(CLI::IsMember({"single", "multi"}));
    eval->add_option("--out-json", eval_json);
    eval->add_option("--out-csv", eval_csv);

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Sweep one ablation axis on planted scenes");
    std::string ab_weights, ab_sweep, ab_concepts = "cat,sky,grass,dog", ab_background;
    std::string ab_prompt = "field sky", ab_out = "ablation.csv", ab_steps = "0,250,500,750,1000";
    std::string ab_layers = "all", ab_space = "output", ab_softmax = "on", ab_head_agg = "concat";
    double ab_timestep = 500.0, ab_sigma = 0.1;
    int ab_samples = 4;
    ablate->add_option("--weights", ab_weights)->required();
    ablate->add_option("--sweep", ab_sweep)
        ->required()
        ->check(CLI::IsMember({"space-softmax", "ca-sa", "layers", "timesteps"}));
    ablate->add_option("--concepts", ab_concepts);
    ablate->add_option("--background", ab_background);
    ablate->add_option("--prompt", ab_prompt);
    ablate->add_option("--timestep", ab_timestep);
    ablate->add_option("--layers", ab_layers);
    ablate->add_option("--space", ab_space)->check(CLI::IsMember({"ca", "value", "output"}));
    ablate->add_option("--softmax", ab_softmax)->check(CLI::IsMember({"on", "off"}));
    ablate->add_option("--head-agg", ab_head_agg)->check(CLI::IsMember({"concat", "mean"}));
    ablate->add_option("--steps", ab_steps, "timesteps for --sweep timesteps");
    ablate->add_option("--samples", ab_samples, "number of planted scenes");
    ablate->add_option("--sigma", ab_sigma, "planted scene noise level");
    ablate->add_option("--seed", seed);
    ablate->add_option("--out", ab_out);

    // demo-planted
    auto* demo = app.add_subcommand("demo-planted", "Planted-scene recovery demo");
    double demo_sigma = 0.0;
    std::string demo_out = "demo";
    demo->add_option("--sigma", demo_sigma)->check(CLI::NonNegativeNumber);
    demo->add_option("--seed", seed);
    demo->add_option("--out", demo_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors collapse to exit 1
    }

    try {
        if (gen->parsed()) {
            std::string hash = cakit::cmd_gen_weights(config, seed, gen_out);
            std::printf("wrote %s (config hash %s)\n", gen_out.c_str(), hash.c_str());
        } else if (run->parsed()) {
            cakit::RunSpec spec;
            spec.weights_path = run_weights;
            std::stringstream ss(run_prompt);
            std::string tok;
            while (ss >> tok) spec.prompt.push_back(tok);
            spec.vocab = parse_vocab(run_concepts, run_background);
            spec.seed = seed;
            spec.out_dir = run_out;
            spec.params.timestep = run_timestep;
            spec.params.space = cakit::saliency_space_from_string(run_space);
            spec.params.softmax = run_softmax == "on";
            spec.params.head_agg = cakit::head_agg_from_string(run_head_agg);

            cakit::MMDiTWeights w = cakit::load_weights(run_weights);
            spec.params.layers = cakit::parse_layer_subset(run_layers, w.config.n_layers);
            cakit::Matrix x0;
            if (run_synthetic) {
                x0 = cakit::synthetic_tokens(w.config, seed);
            } else if (!run_image.empty()) {
                cakit::PgmImage img = cakit::read_pgm(run_image);
                if (img.height != w.config.img_h || img.width != w.config.img_w)
                    throw cakit::shape_error("image is " + std::to_string(img.width) + "x" +
                                             std::to_string(img.height) + ", model expects " +
                                             std::to_string(w.config.img_w) + "x" +
                                             std::to_string(w.config.img_h));
                x0 = cakit::lift_image_to_tokens(img, w.config.d_model);
            } else {
                std::cerr << "run: need --image or --synthetic\n";
                return 1;
            }
            cakit::RunResult res = cakit::cmd_run(spec, x0);
            std::printf("wrote %s and %zu saliency PGMs\n", res.scores_path.c_str(),
                        res.pgm_paths.size());
        } else if (eval->parsed()) {
            cakit::MetricsReport report =
                cakit::cmd_eval(eval_manifest, eval_mode == "multi", eval_json, eval_csv);
            if (report.map)
                std::printf("acc=%.4f miou=%.4f map=%.4f (%zu samples)\n", report.acc,
                            report.miou, *report.map, report.n_samples);
            else
                std::printf("acc=%.4f miou=%.4f (%zu samples)\n", report.acc, report.miou,
                            report.n_samples);
        } else if (ablate->parsed()) {
            cakit::AblateSpec spec;
            spec.weights_path = ab_weights;
            spec.vocab = parse_vocab(ab_concepts, ab_background);
            std::stringstream ss(ab_prompt);
            std::string tok;
            while (ss >> tok) spec.prompt.push_back(tok);
            spec.seed = seed;
            spec.n_scenes = ab_samples;
            spec.sigma = ab_sigma;
            spec.params.timestep = ab_timestep;
            spec.params.space = cakit::saliency_space_from_string(ab_space);
            spec.params.softmax = ab_softmax == "on";
            spec.params.head_agg = cakit::head_agg_from_string(ab_head_agg);
            cakit::MMDiTWeights w = cakit::load_weights(ab_weights);
            spec.params.layers = cakit::parse_layer_subset(ab_layers, w.config.n_layers);
            for (const std::string& s : cakit::split_commas(ab_steps))
                spec.timesteps.push_back(std::stod(s));
            cakit::AblationGrid grid =
                cakit::cmd_ablate(cakit::sweep_axis_from_string(ab_sweep), spec, ab_out);
            std::printf("wrote %s (%zu rows)\n", ab_out.c_str(), grid.rows.size());
        } else if (demo->parsed()) {
            cakit::DemoResult res = cakit::cmd_demo_planted(seed, demo_sigma, demo_out);
            std::printf("acc=%.4f miou=%.4f (outputs in %s)\n", res.report.acc, res.report.miou,
                        demo_out.c_str());
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
