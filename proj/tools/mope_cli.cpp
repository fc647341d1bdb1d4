// mope_cli: batch front end for data generation, training, evaluation,
// routing and cost analysis.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime or training
// failure, 3 I/O failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mope/mope.hpp"

namespace fs = std::filesystem;
using namespace mope;

namespace {

struct Options {
  std::uint64_t seed = 0;
  std::string out_dir = "mope_out";
  std::string data;     // dataset directory; empty = <out>/data
  std::string weights;  // weights directory; empty = <out>
  std::string image;
  std::string output;

  int num_classes = 10;
  int samples_per_class = 100;
  int image_size = 64;
  int input_size = 244;

  int iterations = 1000;
  double lr = 1e-3;
  int batch_size = 16;
  std::vector<int> lr_drops;  // lr divided by 10 at each
  double beta1 = 0.9;
  double lambda = 1.0;
  int crop = 32;

  double sigma = 0.15;
  double max_sigma = 0.15;
  std::vector<int> lowres_factors{2, 4};
  int eval_lowres = 4;

  std::string noisy_expert = "denoise";
  double threshold = 0.5;
  std::string augment = "clean";
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path out_root(const Options& o) { return fs::path(o.out_dir); }
fs::path data_dir(const Options& o) { return o.data.empty() ? out_root(o) / "data" : fs::path(o.data); }
fs::path weights_dir(const Options& o) { return o.weights.empty() ? out_root(o) : fs::path(o.weights); }

Expert parse_expert(const std::string& s) {
  return s == "avg" ? Expert::average_filter : Expert::denoiser;
}

DistortionConfig distortion(const Options& o, std::uint64_t salt) {
  return DistortionConfig{o.max_sigma, o.lowres_factors, o.seed * 1000 + salt};
}

TrainConfig train_config(const Options& o) {
  TrainConfig c;
  c.iterations = o.iterations;
  c.learning_rate = o.lr;
  c.batch_size = o.batch_size;
  for (int it : o.lr_drops) c.lr_schedule.push_back({it, 10.0});
  c.optimizer.beta1 = o.beta1;
  c.lambda_sim = o.lambda;
  c.seed = o.seed;
  return c;
}

template <typename Write>
void write_file(const fs::path& p, Write&& w) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataIoError("cannot write " + p.string());
  w(f);
  if (!f) throw DataIoError("write failed: " + p.string());
}

void load_into(const fs::path& p, const NetworkSpec& spec, ParamStore<float>& out) {
  out = load_weights(p);
  try {
    check_params(Network(spec), out);
  } catch (const std::invalid_argument& e) {
    throw DataIoError(p.string() + " does not fit " + spec.name + ": " + e.what());
  }
}

ParamStore<float> load_for(const fs::path& p, const NetworkSpec& spec) {
  ParamStore<float> ps;
  load_into(p, spec, ps);
  return ps;
}

Mope load_mope(const Options& o) {
  const fs::path w = weights_dir(o);
  return Mope(Network(build_gating()), load_for(w / "gate.bin", build_gating()),
              Network(build_denoiser()), load_for(w / "denoiser.bin", build_denoiser()),
              MopeConfig{o.threshold, parse_expert(o.noisy_expert)});
}

Dataset load_data(const Options& o) {
  const fs::path d = data_dir(o);
  if (!fs::exists(d / "manifest.csv")) {
    throw DataIoError("no dataset at " + d.string() + " (run gen-data first)");
  }
  return load_dataset(d);
}

// ---------------------------------------------------------------------------
// Commands

void cmd_gen_data(const Options& o) {
  const Dataset d = generate(SynthConfig{o.num_classes, o.image_size, o.samples_per_class, o.seed});
  save_dataset(d, data_dir(o));
  std::cout << "wrote " << d.size() << " images (" << o.num_classes << " classes, "
            << o.image_size << "x" << o.image_size << ") to " << data_dir(o) << "\n";
}

void cmd_train_gate(const Options& o) {
  const Dataset d = load_data(o);
  const auto train = select_split(d, Split::train);
  const auto held = select_split(d, Split::heldout);
  auto h = build<float>(build_gating(), o.seed * 1000 + 1);
  DistortedPairStream stream(train.images, distortion(o, 2));
  const auto hist = train_gate(h.net, h.params, stream, train_config(o));
  save_weights(h.params, out_root(o) / "gate.bin");
  write_file(out_root(o) / "gate_loss.csv", [&](std::ostream& f) { write_scalar_history(f, hist); });
  const auto rep = evaluate_gate(h.net, h.params, held.images, o.sigma, o.seed * 1000 + 3,
                                 MopeConfig{o.threshold, Expert::denoiser});
  write_file(out_root(o) / "gate_eval.csv", [&](std::ostream& f) {
    f << "sigma,accuracy,clean_as_clean,clean_as_noisy,noisy_as_clean,noisy_as_noisy\n"
      << o.sigma << "," << std::setprecision(9) << rep.accuracy << "," << rep.clean_as_clean
      << "," << rep.clean_as_noisy << "," << rep.noisy_as_clean << "," << rep.noisy_as_noisy
      << "\n";
  });
  std::cout << std::fixed << std::setprecision(2) << "gate held-out accuracy at sigma=" << o.sigma
            << ": " << 100 * rep.accuracy << "%\n";
}

void cmd_train_denoiser(const Options& o) {
  const Dataset d = load_data(o);
  const auto train = select_split(d, Split::train);
  const auto held = select_split(d, Split::heldout);
  auto g = build<float>(build_denoiser(), o.seed * 1000 + 1);
  auto disc = build<float>(build_discriminator(), o.seed * 1000 + 2);
  DistortedPairStream stream(train.images, distortion(o, 3), o.crop);
  const auto hist = train_denoiser(g.net, g.params, disc.net, disc.params, stream, train_config(o));
  save_weights(g.params, out_root(o) / "denoiser.bin");
  save_weights(disc.params, out_root(o) / "discriminator.bin");
  write_file(out_root(o) / "denoiser_loss.csv", [&](std::ostream& f) { write_loss_history(f, hist); });

  Rng rng(o.seed * 1000 + 4);
  double mse_noisy = 0.0, mse_out = 0.0;
  for (const auto& x : held.images) {
    const auto y = add_gaussian_noise(x, o.sigma, rng);
    mse_noisy += mse(y, x);
    mse_out += mse(forward(g.net, g.params, y).output, x);
  }
  const double n = static_cast<double>(std::max<std::size_t>(held.size(), 1));
  mse_noisy /= n;
  mse_out /= n;
  write_file(out_root(o) / "denoiser_eval.csv", [&](std::ostream& f) {
    f << std::setprecision(9) << "sigma,mse_noisy,mse_denoised,psnr_noisy,psnr_denoised\n"
      << o.sigma << "," << mse_noisy << "," << mse_out << "," << psnr_from_mse(mse_noisy) << ","
      << psnr_from_mse(mse_out) << "\n";
  });
  std::cout << std::fixed << std::setprecision(2) << "held-out PSNR at sigma=" << o.sigma << ": "
            << psnr_from_mse(mse_noisy) << " dB -> " << psnr_from_mse(mse_out) << " dB\n";
}

std::string classifier_file(const std::string& variant) { return "classifier_" + variant + ".bin"; }

void cmd_train_classifier(const Options& o) {
  const Dataset d = load_data(o);
  const auto train = select_split(d, Split::train);
  auto c = build<float>(build_classifier(d.num_classes), o.seed * 1000 + 5);
  const bool aug = o.augment == "augmented";
  const auto hist = train_classifier(c.net, c.params, train, train_config(o),
                                     aug ? AugmentMode::augmented : AugmentMode::clean_only,
                                     distortion(o, 6));
  const std::string variant = aug ? "augmented" : "clean_only";
  save_weights(c.params, out_root(o) / classifier_file(variant));
  write_file(out_root(o) / ("classifier_" + variant + "_loss.csv"),
             [&](std::ostream& f) { write_scalar_history(f, hist); });
  std::cout << "trained " << variant << " classifier, final loss " << hist.back().loss << "\n";
}

void cmd_finetune(const Options& o) {
  const Dataset d = load_data(o);
  const auto train = select_split(d, Split::train);
  const Mope m = load_mope(o);
  const NetworkSpec spec = build_classifier(d.num_classes);
  ParamStore<float> params = load_for(weights_dir(o) / classifier_file("clean_only"), spec);
  const auto hist = finetune_downstream(Network(spec), params, m, train,
                                        train_config(o), distortion(o, 7));
  const std::string variant = o.noisy_expert == "avg" ? "mope_avg" : "mope_denoise";
  save_weights(params, out_root(o) / classifier_file(variant));
  write_file(out_root(o) / ("classifier_" + variant + "_loss.csv"),
             [&](std::ostream& f) { write_scalar_history(f, hist); });
  std::cout << "fine-tuned " << variant << " classifier, final loss " << hist.back().loss << "\n";
}

void cmd_eval(const Options& o) {
  const Dataset d = load_data(o);
  const auto held = select_split(d, Split::heldout);
  const EvalSets sets = make_eval_sets(held, o.eval_lowres, o.sigma, o.seed * 1000 + 8);
  const NetworkSpec spec = build_classifier(d.num_classes);
  const Network net(spec);
  const fs::path w = weights_dir(o);
  const Mope base = load_mope(o);
  const Mope m_avg(base.gate(), base.gate_params(), base.denoiser(), base.denoiser_params(),
                   MopeConfig{o.threshold, Expert::average_filter});
  const Mope m_den(base.gate(), base.gate_params(), base.denoiser(), base.denoiser_params(),
                   MopeConfig{o.threshold, Expert::denoiser});
  const std::vector<AccuracyRow> rows = {
      evaluate_classifier("clean-only", net, load_for(w / classifier_file("clean_only"), spec), sets),
      evaluate_classifier("augmented", net, load_for(w / classifier_file("augmented"), spec), sets),
      evaluate_classifier("MoPE+avg", net, load_for(w / classifier_file("mope_avg"), spec), sets,
                          &m_avg),
      evaluate_classifier("MoPE+denoise", net, load_for(w / classifier_file("mope_denoise"), spec),
                          sets, &m_den),
  };
  std::cout << format_accuracy_table(rows, o.eval_lowres, o.sigma);
  write_file(out_root(o) / "eval.csv", [&](std::ostream& f) { write_accuracy_csv(f, rows); });
}

Tensor<float> read_input_image(const Options& o) {
  if (o.image.empty()) throw ConfigError("--image is required");
  return read_ppm(o.image);
}

void cmd_denoise(const Options& o) {
  const Tensor<float> x = read_input_image(o);
  const auto params = load_for(weights_dir(o) / "denoiser.bin", build_denoiser());
  const fs::path out = o.output.empty() ? out_root(o) / "denoised.ppm" : fs::path(o.output);
  write_ppm(forward(Network(build_denoiser()), params, x).output, out);
  std::cout << "wrote " << out.string() << "\n";
}

void cmd_route(const Options& o) {
  const Tensor<float> x = read_input_image(o);
  const Mope m = load_mope(o);
  GateDecision d;
  const Tensor<float> y = m.preprocess(x, &d);
  const fs::path out = o.output.empty() ? out_root(o) / "routed.ppm" : fs::path(o.output);
  write_ppm(y, out);
  std::cout << std::setprecision(6) << "score " << d.score << " (map min " << d.map_min
            << ", max " << d.map_max << ")\nexpert " << expert_name(d.chosen) << "\nwrote "
            << out.string() << "\n";
  write_file(out_root(o) / "route_decision.csv", [&](std::ostream& f) {
    write_decision_log(f, {fs::path(o.image).filename().string()}, {d});
  });
}

void cmd_analyze(const Options& o) {
  const auto den = count_flops(build_denoiser(), o.input_size, o.input_size);
  const auto gate = count_flops(build_gating(), o.input_size, o.input_size);
  std::cout << format_overhead_table(den, gate) << "\n" << format_report(den) << "\n"
            << format_report(gate) << "gating receptive field " << receptive_field(build_gating())
            << "\n";
  write_file(out_root(o) / "analyze_denoiser.csv", [&](std::ostream& f) { f << report_csv(den); });
  write_file(out_root(o) / "analyze_gating.csv", [&](std::ostream& f) { f << report_csv(gate); });
}

// ---------------------------------------------------------------------------
// Option wiring

void add_training_flags(CLI::App* c, Options& o) {
  c->add_option("--iterations", o.iterations, "Training iterations")->check(CLI::NonNegativeNumber);
  c->add_option("--lr", o.lr, "Learning rate")->check(CLI::NonNegativeNumber);
  c->add_option("--batch-size", o.batch_size, "Batch size")->check(CLI::PositiveNumber);
  c->add_option("--lr-drops", o.lr_drops, "Iterations at which lr is divided by 10")->delimiter(',');
  c->add_option("--beta1", o.beta1, "Adam first-moment decay")->check(CLI::Range(0.0, 1.0));
  c->add_option("--max-sigma", o.max_sigma, "Upper bound of the training noise level")
      ->check(CLI::NonNegativeNumber);
  c->add_option("--lowres-factors", o.lowres_factors, "Low-resolution factors, comma separated")
      ->delimiter(',');
}

void add_data_flag(CLI::App* c, Options& o) {
  c->add_option("--data", o.data, "Dataset directory (default <out-dir>/data)");
}

void add_mope_flags(CLI::App* c, Options& o) {
  c->add_option("--weights", o.weights, "Directory holding gate.bin / denoiser.bin (default <out-dir>)");
  c->add_option("--noisy-expert", o.noisy_expert, "Expert for images the gate flags as noisy")
      ->check(CLI::IsMember({"avg", "denoise"}));
  c->add_option("--threshold", o.threshold, "Gate score above which an image counts as clean")
      ->check(CLI::Range(0.0, 1.0));
}

Options with_training(int iterations, double lr, int batch, std::vector<int> drops, double beta1) {
  Options o;
  o.iterations = iterations;
  o.lr = lr;
  o.batch_size = batch;
  o.lr_drops = std::move(drops);
  o.beta1 = beta1;
  return o;
}

std::string config_value(const CLI::Option* opt) {
  std::vector<std::string> vals = opt->count() > 0 ? opt->results() : std::vector<std::string>{};
  if (vals.empty()) {
    if (opt->get_default_str().empty()) return "\"\"";
    return opt->get_default_str();
  }
  if (vals.size() == 1) return vals.front();
  std::string s = "[";
  for (std::size_t i = 0; i < vals.size(); ++i) s += (i ? "," : "") + vals[i];
  return s + "]";
}

// Global keys, then the active subcommand's section; readable by --config.
std::string resolved_config(const CLI::App& app, const CLI::App& cmd) {
  std::ostringstream os;
  auto emit = [&os](const CLI::App& a) {
    for (const CLI::Option* opt : a.get_options()) {
      const std::string name = opt->get_single_name();
      if (opt->get_lnames().empty() || name == "help" || name == "config") continue;
      const std::string value = config_value(opt);
      if (value == "{}") {
        os << "# " << name << " (empty)\n";
      } else {
        os << name << "=" << value << "\n";
      }
    }
  };
  emit(app);
  os << "\n[" << cmd.get_name() << "]\n";
  emit(cmd);
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  Options global;
  std::map<std::string, Options> per_command = {
      {"gen-data", Options{}},
      {"train-gate", with_training(2000, 1e-3, 16, {}, 0.9)},
      {"train-denoiser", with_training(5000, 2e-4, 16, {2500, 4000}, 0.5)},
      {"train-classifier", with_training(3000, 2e-3, 32, {2000}, 0.9)},
      {"finetune-mope", with_training(1000, 2e-3, 32, {666}, 0.9)},
      {"eval", Options{}},
      {"denoise", Options{}},
      {"route", Options{}},
      {"analyze", Options{}},
  };

  CLI::App app{"Mixture of pre-processing experts: data, training, routing and analysis"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "INI config; [section] names match subcommands");
  app.add_option("--seed", global.seed, "Base seed for data, initialisation and sampling");
  app.add_option("--out-dir", global.out_dir, "Output root")->envname("MOPE_OUT_DIR");
  app.require_subcommand(1, 1);
  app.fallthrough();

  Options* o = &per_command["gen-data"];
  auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset");
  gen->add_option("--num-classes", o->num_classes)->check(CLI::Range(2, 10));
  gen->add_option("--samples-per-class", o->samples_per_class)->check(CLI::PositiveNumber);
  gen->add_option("--input-size", o->image_size, "Image side length")->check(CLI::Range(16, 4096));
  add_data_flag(gen, *o);

  o = &per_command["train-gate"];
  auto* tg = app.add_subcommand("train-gate", "Train the gating network");
  add_data_flag(tg, *o);
  add_training_flags(tg, *o);
  tg->add_option("--sigma", o->sigma, "Noise level for held-out evaluation")->check(CLI::NonNegativeNumber);
  tg->add_option("--threshold", o->threshold)->check(CLI::Range(0.0, 1.0));

  o = &per_command["train-denoiser"];
  auto* td = app.add_subcommand("train-denoiser", "Adversarially train the denoiser");
  add_data_flag(td, *o);
  add_training_flags(td, *o);
  td->add_option("--sigma", o->sigma, "Noise level for held-out evaluation")->check(CLI::NonNegativeNumber);
  td->add_option("--crop", o->crop, "Training crop side (0 = full image)")->check(CLI::NonNegativeNumber);
  td->add_option("--lambda", o->lambda, "Weight of the similarity term")->check(CLI::NonNegativeNumber);

  o = &per_command["train-classifier"];
  auto* tc = app.add_subcommand("train-classifier", "Train the downstream classifier");
  add_data_flag(tc, *o);
  add_training_flags(tc, *o);
  tc->add_option("--augment", o->augment, "clean or augmented")->check(CLI::IsMember({"clean", "augmented"}));

  o = &per_command["finetune-mope"];
  auto* ft = app.add_subcommand("finetune-mope", "Fine-tune the clean-only classifier behind the mixture");
  add_data_flag(ft, *o);
  add_training_flags(ft, *o);
  add_mope_flags(ft, *o);

  o = &per_command["eval"];
  auto* ev = app.add_subcommand("eval", "Compare the four classifiers on clean / lowres / noisy data");
  add_data_flag(ev, *o);
  add_mope_flags(ev, *o);
  ev->add_option("--sigma", o->sigma)->check(CLI::NonNegativeNumber);
  ev->add_option("--lowres-factor", o->eval_lowres)->check(CLI::PositiveNumber);

  o = &per_command["denoise"];
  auto* dn = app.add_subcommand("denoise", "Run the denoiser on one PPM image");
  dn->add_option("--weights", o->weights, "Directory holding denoiser.bin");
  dn->add_option("--image", o->image, "Input PPM")->required();
  dn->add_option("--output", o->output, "Output PPM (default <out-dir>/denoised.ppm)");

  o = &per_command["route"];
  auto* rt = app.add_subcommand("route", "Gate one PPM image and apply the chosen expert");
  add_mope_flags(rt, *o);
  rt->add_option("--image", o->image, "Input PPM")->required();
  rt->add_option("--output", o->output, "Output PPM (default <out-dir>/routed.ppm)");

  o = &per_command["analyze"];
  auto* an = app.add_subcommand("analyze", "Parameter, MAC and receptive-field report");
  an->add_option("--input-size", o->input_size, "Square input side")->check(CLI::Range(8, 8192));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  const CLI::App* cmd = app.get_subcommands().front();
  const std::string& name = cmd->get_name();
  Options& opts = per_command.at(name);
  opts.seed = global.seed;
  opts.out_dir = global.out_dir;
  try {
    fs::create_directories(out_root(opts));
    write_file(out_root(opts) / (name + ".config.ini"),
               [&](std::ostream& f) { f << resolved_config(app, *cmd); });
    if (name == "gen-data") cmd_gen_data(opts);
    else if (name == "train-gate") cmd_train_gate(opts);
    else if (name == "train-denoiser") cmd_train_denoiser(opts);
    else if (name == "train-classifier") cmd_train_classifier(opts);
    else if (name == "finetune-mope") cmd_finetune(opts);
    else if (name == "eval") cmd_eval(opts);
    else if (name == "denoise") cmd_denoise(opts);
    else if (name == "route") cmd_route(opts);
    else if (name == "analyze") cmd_analyze(opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const WeightFileError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const DataIoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
