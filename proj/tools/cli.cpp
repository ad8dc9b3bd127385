#include "cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "zsd/agbf.hpp"
#include "zsd/image_io.hpp"
#include "zsd/metrics.hpp"
#include "zsd/serialization.hpp"
#include "zsd/service.hpp"
#include "zsd/signal.hpp"
#include "zsd/synthetic.hpp"
#include "zsd/training.hpp"

namespace zsd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<double> parse_lambda_grid(const std::string& text) {
  std::vector<double> out;
  if (const auto at = text.find('@'); at != std::string::npos) {
    const auto colon = text.find(':', at);
    if (colon == std::string::npos) throw std::invalid_argument("lambda grid must look like N@lo:hi");
    std::size_t used = 0;
    const int n = std::stoi(text.substr(0, at), &used);
    const double lo = std::stod(text.substr(at + 1, colon - at - 1));
    const double hi = std::stod(text.substr(colon + 1));
    if (n < 1 || lo > hi) throw std::invalid_argument("lambda grid needs N >= 1 and lo <= hi");
    for (int i = 0; i < n; ++i) out.push_back(n == 1 ? lo : lo + (hi - lo) * i / (n - 1));
    return out;
  }
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stod(item));
  if (out.empty()) throw std::invalid_argument("empty lambda list");
  return out;
}

namespace {

struct TrainFlags {
  int stages = 2;
  double lambda = 350.0;
  int epochs = 500;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::string els = "els";

  void add_to(CLI::App& app) {
    app.add_option("--stages", stages, "Number of filter stages")->check(CLI::Range(1, kMaxStages))->capture_default_str();
    app.add_option("--lambda", lambda, "Weight of the edge regularizer")->capture_default_str();
    app.add_option("--epochs", epochs, "Optimization steps")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--lr", lr, "AdamW learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--seed", seed, "Initialization seed")->capture_default_str();
    app.add_option("--els", els, "Shuffle applied to the training pair")
        ->check(CLI::IsMember({"els", "random", "none"}))
        ->capture_default_str();
  }
  void apply(TrainConfig& t, LossConfig& l, ModelConfig& m) const {
    t.epochs = epochs;
    t.learning_rate = lr;
    t.seed = seed;
    t.els_mode = parse_els_mode(els);
    l.lambda = lambda;
    m.stages = stages;
  }
};

ImageFormat output_format(const fs::path& path, const std::string& flag) {
  return flag.empty() ? format_from_path(path) : parse_image_format(flag);
}

json image_stats(const Image& image) {
  return {{"width", image.width()}, {"height", image.height()}, {"min", image.min()}, {"max", image.max()}};
}

int cmd_denoise(const fs::path& input, const fs::path& output, const std::string& format, const TrainFlags& flags,
                const std::string& sigma_dir, const std::string& checkpoint, const std::string& report_path,
                bool verbose, bool as_json, std::ostream& out, std::ostream& err) {
  const Image y = load_image(input);
  TrainConfig t;
  LossConfig l;
  ModelConfig m;
  flags.apply(t, l, m);
  ProgressFn progress;
  if (verbose) {
    progress = [&err, &t](int epoch, double loss) {
      if ((epoch + 1) % 50 == 0 || epoch + 1 == t.epochs) err << "epoch " << epoch + 1 << "/" << t.epochs << " loss " << loss << "\n";
      return true;
    };
  }
  TrainResult r = train_single_image(y, t, l, m, progress);
  const auto [padded, pad] = pad_to_multiple(y, 2 * r.model.patch_size);
  DenoiseResult d = denoise(padded, r.model);
  const Image result = crop_with(d.image, pad);
  save_image(result, output, output_format(output, format));
  if (!sigma_dir.empty()) export_sigma_maps(d.maps, sigma_dir, r.model.patch_size);
  if (!checkpoint.empty()) save_checkpoint(r.model, checkpoint);
  const json report = training_report_json(r.report, t, l, m);
  if (!report_path.empty()) write_text_file(report_path, report.dump(1));
  if (as_json) {
    out << json{{"output", output.string()},
                {"image", image_stats(result)},
                {"epochs", r.report.loss_per_epoch.size()},
                {"final_loss", r.report.loss_per_epoch.empty() ? 0.0 : r.report.loss_per_epoch.back()},
                {"seconds", r.report.wall_time},
                {"checksum", report["checksum"]}}
               .dump()
        << "\n";
  }
  return kExitOk;
}

int cmd_refilter(const fs::path& input, const fs::path& checkpoint, const std::string& sigma_dir,
                 const std::string& edit_file, const fs::path& output, const std::string& format, bool as_json,
                 std::ostream& out) {
  const Image y = load_image(input);
  const DenoiserModel model = load_checkpoint(checkpoint);
  const auto [padded, pad] = pad_to_multiple(y, 2 * model.patch_size);
  std::vector<SigmaMaps> maps = sigma_dir.empty() ? denoise(padded, model).maps : load_sigma_maps(sigma_dir);
  if (maps.size() != model.stages.size()) {
    throw std::invalid_argument("sigma maps have " + std::to_string(maps.size()) + " stages, the checkpoint " +
                                std::to_string(model.stages.size()));
  }
  std::vector<SigmaEdit> edits;
  if (!edit_file.empty()) edits = edits_from_json(read_json_file(edit_file));
  for (SigmaEdit e : edits) {
    if (e.stage < 0 || e.stage >= static_cast<int>(maps.size())) {
      throw std::invalid_argument("edit stage " + std::to_string(e.stage) + " out of range");
    }
    if (!e.region.valid_for(y.width(), y.height())) throw std::invalid_argument("edit region outside the image");
    // Regions are given on the input image; maps live on the padded grid.
    e.region = {e.region.x0 + pad.left, e.region.y0 + pad.top, e.region.x1 + pad.left, e.region.y1 + pad.top};
    maps[e.stage] = apply_sigma_edit(maps[e.stage], e, model.patch_size);
  }
  const Image result = crop_with(refilter(padded, model, maps), pad);
  save_image(result, output, output_format(output, format));
  if (as_json) {
    out << json{{"output", output.string()}, {"edits", edits.size()}, {"image", image_stats(result)}}.dump() << "\n";
  }
  return kExitOk;
}

int cmd_metrics(const fs::path& a_path, const fs::path& b_path, double range, const std::string& roi_signal,
                const std::string& roi_bg, std::ostream& out) {
  const Image a = load_image(a_path), b = load_image(b_path);
  json j = {{"psnr", psnr_to_json(psnr(a, b, range))}};
  j["ssim"] = a.width() >= 11 && a.height() >= 11 ? json(ssim(a, b, range)) : json(nullptr);
  if (!roi_signal.empty()) {
    const RoiRect sig = service::parse_roi(roi_signal), bg = service::parse_roi(roi_bg);
    j["cnr_a"] = cnr(a, sig, bg);
    j["cnr_b"] = cnr(b, sig, bg);
  }
  out << j.dump() << "\n";
  return kExitOk;
}

int cmd_simulate(const std::string& phantom, int size, std::optional<double> photons, std::optional<double> gauss_sigma,
                 int corr, std::uint64_t seed, const fs::path& out_clean, const fs::path& out_noisy,
                 const std::string& format, bool as_json, std::ostream& out) {
  const Phantom kind = phantom == "shepp-logan" ? Phantom::shepp_logan : Phantom::modified_shepp_logan;
  const Image clean = shepp_logan(size, kind);
  Image noisy;
  if (photons) noisy = add_poisson_noise(clean, *photons, seed);
  else if (gauss_sigma) noisy = add_correlated_gaussian_noise(clean, *gauss_sigma, corr, seed);
  else throw std::invalid_argument("simulate needs --photons or --gauss-sigma");
  save_image(clean, out_clean, output_format(out_clean, format));
  save_image(noisy, out_noisy, output_format(out_noisy, format));
  if (as_json) {
    out << json{{"clean", out_clean.string()}, {"noisy", out_noisy.string()}, {"psnr", psnr_to_json(psnr(noisy, clean))}}
               .dump()
        << "\n";
  }
  return kExitOk;
}

int cmd_lambda_sweep(const fs::path& input, const fs::path& reference, const std::string& grid, TrainFlags flags,
                     std::ostream& out, std::ostream& err, bool verbose) {
  const Image y = load_image(input), clean = load_image(reference);
  require_same_dims(y, clean, "lambda-sweep");
  const auto lambdas = parse_lambda_grid(grid);
  json rows = json::array();
  std::size_t best = 0;
  double best_psnr = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    flags.lambda = lambdas[i];
    TrainConfig t;
    LossConfig l;
    ModelConfig m;
    flags.apply(t, l, m);
    const TrainResult r = train_single_image(y, t, l, m);
    const Image d = denoise_padded(y, r.model).image;
    const double p = psnr(d, clean), s = ssim(d, clean);
    if (verbose) err << "lambda " << lambdas[i] << ": psnr " << p << " ssim " << s << "\n";
    if (p > best_psnr) {
      best_psnr = p;
      best = i;
    }
    rows.push_back({{"lambda", lambdas[i]}, {"psnr", psnr_to_json(p)}, {"ssim", s}, {"best", false}});
  }
  rows[best]["best"] = true;
  out << json{{"rows", rows}, {"best_lambda", lambdas[best]}}.dump() << "\n";
  return kExitOk;
}

int cmd_els_validate(const fs::path& input, double content_scale, std::ostream& out) {
  const Image y = load_image(input);
  const auto [padded, pad] = pad_to_multiple(y, 2);
  const auto [g1, g2] = downsample_pair(padded);
  out << json{{"identity", to_json(els_validation(g1, g2, Shuffler::identity, content_scale))},
              {"els", to_json(els_validation(g1, g2, Shuffler::els, content_scale))},
              {"content_scale", content_scale}}
             .dump()
      << "\n";
  return kExitOk;
}

int cmd_serve(const std::string& host, int port, const fs::path& workdir, int workers, std::ostream& out,
              std::ostream& err) {
  // Signals go to a dedicated waiter thread so shutdown runs in normal context.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  service::ServiceConfig cfg;
  cfg.workdir = workdir;
  cfg.workers = workers;
  service::Service svc(cfg);
  std::atomic<bool> done{false};
  std::thread waiter([&] {
    const timespec tick{0, 200'000'000};
    while (!done) {
      if (sigtimedwait(&set, nullptr, &tick) > 0) {
        svc.stop();
        return;
      }
    }
  });
  out << "listening on " << host << ":" << port << " (workdir " << workdir.string() << ", " << svc.worker_count()
      << " training workers)" << std::endl;
  const bool ok = svc.listen(host, port);
  done = true;
  waiter.join();
  pthread_sigmask(SIG_UNBLOCK, &set, nullptr);
  if (!ok) {
    err << "zsd: cannot listen on " << host << ":" << port << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zero-shot single-image denoiser with editable filter maps", "zsd"};
  app.require_subcommand(1);
  app.fallthrough();  // --json / -v may follow the subcommand
  bool as_json = false, verbose = false;
  app.add_flag("--json", as_json, "Print a JSON summary on success");
  app.add_flag("-v,--verbose", verbose, "Progress on stderr");

  std::string input, output, format, sigma_dir, checkpoint, report, edit_file;
  TrainFlags train_flags;

  auto* denoise_cmd = app.add_subcommand("denoise", "Train on one image and write its denoised version");
  denoise_cmd->add_option("-i,--input", input, "Noisy image")->required()->check(CLI::ExistingFile);
  denoise_cmd->add_option("-o,--output", output, "Denoised image")->required();
  denoise_cmd->add_option("--format", format, "png8, png16 or rawf32 (default: from extension)");
  denoise_cmd->add_option("--export-sigma", sigma_dir, "Directory for per-stage sigma maps");
  denoise_cmd->add_option("--checkpoint", checkpoint, "Write the trained model here");
  denoise_cmd->add_option("--report", report, "Write the training report here");
  train_flags.add_to(*denoise_cmd);

  auto* refilter_cmd = app.add_subcommand("refilter", "Re-run the filter cascade with edited sigma maps");
  refilter_cmd->add_option("-i,--input", input, "Image the model was trained on")->required()->check(CLI::ExistingFile);
  refilter_cmd->add_option("--checkpoint", checkpoint, "Trained model")->required()->check(CLI::ExistingFile);
  refilter_cmd->add_option("--sigma", sigma_dir, "Sigma-map directory (default: predict from the model)")
      ->check(CLI::ExistingDirectory);
  refilter_cmd->add_option("--edit", edit_file, "JSON list of edits")->check(CLI::ExistingFile);
  refilter_cmd->add_option("-o,--output", output, "Refiltered image")->required();
  refilter_cmd->add_option("--format", format, "png8, png16 or rawf32 (default: from extension)");

  std::string a_path, b_path, roi_signal, roi_bg;
  double range = 1.0;
  auto* metrics_cmd = app.add_subcommand("metrics", "PSNR, SSIM and optional CNR of two images");
  metrics_cmd->add_option("--a", a_path, "First image")->required()->check(CLI::ExistingFile);
  metrics_cmd->add_option("--b", b_path, "Second image")->required()->check(CLI::ExistingFile);
  metrics_cmd->add_option("--range", range, "Data range")->check(CLI::PositiveNumber)->capture_default_str();
  auto* roi_sig_opt = metrics_cmd->add_option("--roi-signal", roi_signal, "x0,y0,x1,y1");
  auto* roi_bg_opt = metrics_cmd->add_option("--roi-bg", roi_bg, "x0,y0,x1,y1");
  roi_sig_opt->needs(roi_bg_opt);
  roi_bg_opt->needs(roi_sig_opt);

  std::string phantom = "shepp-logan", out_clean, out_noisy;
  int size = 256, corr = 2;
  std::optional<double> photons, gauss_sigma;
  std::uint64_t sim_seed = 0;
  auto* simulate_cmd = app.add_subcommand("simulate", "Write a clean/noisy phantom pair");
  simulate_cmd->add_option("--phantom", phantom)
      ->check(CLI::IsMember({"shepp-logan", "modified-shepp-logan"}))
      ->capture_default_str();
  simulate_cmd->add_option("--size", size)->check(CLI::Range(32, 8192))->capture_default_str();
  auto* photons_opt = simulate_cmd->add_option("--photons", photons, "Poisson photons per pixel")->check(CLI::PositiveNumber);
  auto* gauss_opt = simulate_cmd->add_option("--gauss-sigma", gauss_sigma, "Correlated Gaussian noise std")
                        ->check(CLI::NonNegativeNumber);
  auto* corr_opt = simulate_cmd->add_option("--corr", corr, "Box half-width of the noise correlation")
                       ->check(CLI::NonNegativeNumber)
                       ->capture_default_str();
  photons_opt->excludes(gauss_opt);
  photons_opt->excludes(corr_opt);
  simulate_cmd->add_option("--seed", sim_seed)->capture_default_str();
  simulate_cmd->add_option("--out-clean", out_clean)->required();
  simulate_cmd->add_option("--out-noisy", out_noisy)->required();
  simulate_cmd->add_option("--format", format, "png8, png16 or rawf32 (default: from extension)");

  std::string reference, grid = "10@200:500";
  TrainFlags sweep_flags;
  auto* sweep_cmd = app.add_subcommand("lambda-sweep", "Train once per lambda and score against a reference");
  sweep_cmd->add_option("-i,--input", input)->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--reference", reference, "Clean image")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--lambdas", grid, "N@lo:hi or a comma list")->capture_default_str();
  sweep_flags.add_to(*sweep_cmd);

  double content_scale = kDefaultContentScale;
  auto* els_cmd = app.add_subcommand("els-validate", "Correlation statistics of the downsampled pair");
  els_cmd->add_option("-i,--input", input)->required()->check(CLI::ExistingFile);
  els_cmd->add_option("--content-scale", content_scale)->check(CLI::PositiveNumber)->capture_default_str();

  std::string host = "127.0.0.1", workdir;
  int port = 8080, workers = 0;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP session service");
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->check(CLI::Range(0, 65535))->capture_default_str();
  serve_cmd->add_option("--workdir", workdir, "Session storage")->required();
  serve_cmd->add_option("--workers", workers, "Training workers (0: half the hardware threads)")->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*denoise_cmd) {
      return cmd_denoise(input, output, format, train_flags, sigma_dir, checkpoint, report, verbose, as_json, out, err);
    }
    if (*refilter_cmd) return cmd_refilter(input, checkpoint, sigma_dir, edit_file, output, format, as_json, out);
    if (*metrics_cmd) return cmd_metrics(a_path, b_path, range, roi_signal, roi_bg, out);
    if (*simulate_cmd) {
      if (!photons && !gauss_sigma) {
        err << "zsd simulate: one of --photons or --gauss-sigma is required\n";
        return kExitUsage;
      }
      return cmd_simulate(phantom, size, photons, gauss_sigma, corr, sim_seed, out_clean, out_noisy, format, as_json, out);
    }
    if (*sweep_cmd) return cmd_lambda_sweep(input, reference, grid, sweep_flags, out, err, verbose);
    if (*els_cmd) return cmd_els_validate(input, content_scale, out);
    if (*serve_cmd) return cmd_serve(host, port, workdir, workers, out, err);
  } catch (const std::exception& e) {
    err << "zsd: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace zsd::cli
