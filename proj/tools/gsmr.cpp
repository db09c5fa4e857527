// Command-line front end: simulate -> gate -> reconstruct -> evaluate, plus
// slice rendering, NUFFT benchmarking and preset listing.

#include <chrono>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "gsmr/eval.hpp"
#include "gsmr/recon.hpp"

namespace fs = std::filesystem;
using namespace gsmr;

namespace {

ReconConfig load_config_arg(const std::string& config_path, const std::string& preset) {
  if (!config_path.empty() && !preset.empty())
    throw std::runtime_error("give either --config or --preset, not both");
  if (!config_path.empty()) return load_config(config_path);
  if (!preset.empty()) return preset_config(preset);
  throw std::runtime_error("missing --config or --preset");
}

std::string state_file(const fs::path& dir, const char* stem, int i, const char* ext) {
  return (dir / (std::string(stem) + std::to_string(i) + ext)).string();
}

int count_states(const fs::path& dir, const char* stem, const char* ext) {
  int n = 0;
  while (fs::exists(state_file(dir, stem, n, ext))) ++n;
  return n;
}

void cmd_simulate(const ReconConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  const SimProtocol& sim = cfg.simulation;
  Dims3 dims = cfg.grid_dims();
  PhantomScene scene = desk_scene(cfg.grid_size, cfg.resolved_diaphragm_amplitude(),
                                  sim.breathing_hz, sim.waveform);
  RadialTrajectory traj =
      golden_angle_trajectory(sim.n_spokes, sim.samples_per_spoke, sim.tr_seconds);
  CoilSet coils = smooth_coil_maps(sim.n_coils, dims, cfg.rng_seed, sim.uniform_coils);
  RadialKSpace ks = simulate_acquisition(scene, traj, coils, sim.noise_std, cfg.rng_seed,
                                         sim.amplitude_levels);

  // Ground-truth binning from the quantized per-spoke amplitudes.
  std::vector<double> amps = spoke_amplitudes(scene, traj, sim.amplitude_levels);
  MotionStateBins bins = bin_values(amps, cfg.n_states);

  fs::path dir(out_dir);
  write_trajectory((dir / "trajectory.bin").string(), traj);
  write_kspace((dir / "kspace.bin").string(), ks);
  write_coils((dir / "coils.gsmr").string(), coils);
  write_bins((dir / "bins.json").string(), bins);
  save_roi_specs((dir / "rois.json").string(), desk_roi_specs(scene), dims);
  save_config((dir / "config.json").string(), cfg);
  for (int i = 0; i < bins.n_states(); ++i) {
    PhantomFrame frame = render_phantom(scene, bins.amplitude[size_t(i)], dims);
    write_volume(state_file(dir, "truth_state_", i, ".gsmr"), frame.volume);
    VectorField u = warp_field_between(scene, bins.amplitude[0], bins.amplitude[size_t(i)],
                                       dims);
    write_field(state_file(dir, "truth_dvf_", i, ".bin"), u);
  }
  std::cout << "simulated " << sim.n_spokes << " spokes x " << sim.samples_per_spoke
            << " samples, " << sim.n_coils << " coils, " << bins.n_states()
            << " states -> " << out_dir << "\n";
}

void cmd_reconstruct(const ReconConfig& cfg, const std::string& kspace_dir,
                     const std::string& out_dir, const NufftOptions& nopt) {
  fs::path kdir(kspace_dir), odir(out_dir);
  fs::create_directories(odir);
  RadialTrajectory traj = read_trajectory((kdir / "trajectory.bin").string());
  RadialKSpace ks = read_kspace((kdir / "kspace.bin").string());
  CoilSet coils = read_coils((kdir / "coils.gsmr").string());
  MotionStateBins bins;
  if (fs::exists(kdir / "bins.json"))
    bins = read_bins((kdir / "bins.json").string());
  else
    bins = gate_kspace(ks, cfg.n_states);

  TrainOptions topt;
  topt.nufft = nopt;
  if (cfg.checkpoint_interval > 0) topt.checkpoint_dir = out_dir;
  TrainResult res = train(cfg, traj, ks, bins, coils, topt);

  write_cloud((odir / "cloud.gspc").string(), res.cloud);
  write_motion_model((odir / "motion.gsmm").string(), res.motion);
  write_loss_history((odir / "loss_history.csv").string(), res.history);
  write_volume((odir / "baseline.gsmr").string(), res.baseline);
  save_config((odir / "config.json").string(), cfg);
  std::vector<ComplexVolume> states = render_states(res.cloud, res.motion);
  write_volume((odir / "reference.gsmr").string(), states[0]);
  for (int i = 0; i < int(states.size()); ++i) {
    write_volume(state_file(odir, "recon_state_", i, ".gsmr"), states[size_t(i)]);
    write_field(state_file(odir, "recon_dvf_", i, ".bin"),
                state_dvf_full(res.cloud, res.motion, i));
  }
  if (!res.history.empty())
    std::cout << "trained " << res.history.size() << " iterations, final loss "
              << res.history.back().total << " -> " << out_dir << "\n";
}

void cmd_evaluate(const std::string& recon_dir, const std::string& truth_dir,
                  const std::string& rois_path, const std::string& out_csv,
                  bool volumetric, int slice_y) {
  fs::path rdir(recon_dir), tdir(truth_dir);
  int nr = count_states(rdir, "recon_state_", ".gsmr");
  int nt = count_states(tdir, "truth_state_", ".gsmr");
  if (nr == 0 || nt == 0) throw std::runtime_error("no state volumes found");
  int ns = std::min(nr, nt);

  std::vector<ComplexVolume> recon(static_cast<size_t>(ns)), truth(static_cast<size_t>(ns));
  for (int i = 0; i < ns; ++i) {
    recon[size_t(i)] = read_volume(state_file(rdir, "recon_state_", i, ".gsmr"));
    truth[size_t(i)] = read_volume(state_file(tdir, "truth_state_", i, ".gsmr"));
  }
  Dims3 dims = recon[0].dims;
  std::vector<RoiSpec> specs = load_roi_specs(rois_path);
  std::vector<double> amps(size_t(ns), 0.0);
  if (fs::exists(tdir / "bins.json")) {
    MotionStateBins bins = read_bins((tdir / "bins.json").string());
    for (int i = 0; i < ns && i < bins.n_states(); ++i) amps[size_t(i)] = bins.amplitude[size_t(i)];
  }
  if (slice_y < 0) slice_y = dims[1] / 2;

  MetricsReport report;
  RealVolume noise = noise_mask(specs, dims);
  RealVolume noise_eval = volumetric ? noise : restrict_to_coronal(noise, slice_y);
  RealVolume slice_ones(dims);
  for (int x = 0; x < dims[0]; ++x)
    for (int z = 0; z < dims[2]; ++z) slice_ones.at(x, slice_y, z) = 1.0;

  for (int i = 0; i < ns; ++i) {
    RealVolume mag = magnitude(recon[size_t(i)]);
    for (const auto& spec : specs) {
      RealVolume m = roi_mask(spec, dims, amps[size_t(i)]);
      if (!volumetric) m = restrict_to_coronal(m, slice_y);
      if (mask_empty(m)) continue;  // ROI absent from the selected slice
      report.add("snr", spec.name, i, snr_db(mag, m, noise_eval));
      report.add("cnr", spec.name, i, cnr_db(mag, m, noise_eval));
    }
    report.add("nrmse", "", i,
               nrmse(recon[size_t(i)], truth[size_t(i)], volumetric ? nullptr : &slice_ones));
  }

  // DVF endpoint error over the (state-shifted) liver, when both sides wrote
  // displacement fields.
  const RoiSpec* liver = nullptr;
  for (const auto& s : specs)
    if (s.name == "liver") liver = &s;
  for (int i = 0; i < ns; ++i) {
    std::string re = state_file(rdir, "recon_dvf_", i, ".bin");
    std::string te = state_file(tdir, "truth_dvf_", i, ".bin");
    if (!liver || !fs::exists(re) || !fs::exists(te)) break;
    VectorField ue = read_field(re), ut = read_field(te);
    RealVolume m = roi_mask(*liver, dims, amps[size_t(i)]);
    DvfError err = dvf_endpoint_error(ue, ut, m);
    report.add("dvf_epe_mean", "liver", i, err.mean);
    report.add("dvf_epe_max", "liver", i, err.max);
  }

  // Diaphragm edge tracking through the liver dome column.
  int line_x = dims[0] / 2;
  DiaphragmProfile pr = diaphragm_profile(recon, line_x, slice_y);
  DiaphragmProfile pt = diaphragm_profile(truth, line_x, slice_y);
  bool complete = true;
  for (int i = 0; i < ns; ++i) {
    if (std::isnan(pr.edge_z[size_t(i)]) || std::isnan(pt.edge_z[size_t(i)])) complete = false;
    report.add("diaphragm_edge", "recon", i, pr.edge_z[size_t(i)]);
    report.add("diaphragm_edge", "truth", i, pt.edge_z[size_t(i)]);
  }
  if (complete && ns >= 2)
    report.add("diaphragm_pearson", "", -1, pearson_correlation(pr.edge_z, pt.edge_z));

  write_report_csv(out_csv, report);

  // Spatiotemporal profile image next to the report (states across columns).
  std::vector<uint8_t> px(size_t(pr.line_length) * size_t(pr.n_states));
  double pmax = 0;
  for (double v : pr.image) pmax = std::max(pmax, v);
  for (int r = 0; r < pr.line_length; ++r)
    for (int c = 0; c < pr.n_states; ++c) {
      double v = pr.image[size_t(c) * size_t(pr.line_length) + size_t(pr.line_length - 1 - r)];
      px[size_t(r) * size_t(pr.n_states) + size_t(c)] =
          pmax > 0 ? uint8_t(std::lround(255.0 * v / pmax)) : 0;
    }
  fs::path profile_png = fs::path(out_csv).parent_path() / "diaphragm_profile.png";
  write_png_gray8(profile_png.string(), pr.n_states, pr.line_length, px);
  std::cout << "wrote " << out_csv << " (" << report.rows.size() << " rows)\n";
}

void cmd_render(const std::string& volume_path, const std::string& plane_name, int slice,
                const std::string& out_png) {
  ComplexVolume v = read_volume(volume_path);
  SlicePlane plane = parse_plane(plane_name);
  if (slice < 0) {
    int axis = plane == SlicePlane::coronal ? 1 : plane == SlicePlane::sagittal ? 0 : 2;
    slice = v.dims[axis] / 2;
  }
  SliceImage img = render_slice(v, plane, slice);
  write_png_gray8(out_png, img.width, img.height, img.pixels);
  std::cout << "wrote " << out_png << " (" << img.width << "x" << img.height << ")\n";
}

void cmd_nufft_bench(int grid, int spokes, int samples, int width) {
  Dims3 dims{grid, grid, grid};
  if (samples <= 0) samples = std::max(2, grid / 2);
  RadialTrajectory traj = golden_angle_trajectory(spokes, samples, 0.0037);
  ComplexVolume vol(dims);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : vol.data) v = cplx(u(rng), u(rng));

  auto timed = [&](const NufftOptions& opt, std::vector<cplx>& out) {
    auto t0 = std::chrono::steady_clock::now();
    out = nufft_forward(vol, traj, opt);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  std::vector<cplx> sd, sg;
  NufftOptions od{NufftPath::direct, width};
  NufftOptions og{NufftPath::gridding, width};
  double td = timed(od, sd);
  double tg = timed(og, sg);
  double num = 0, den = 0;
  for (size_t i = 0; i < sd.size(); ++i) {
    num += std::norm(sg[i] - sd[i]);
    den += std::norm(sd[i]);
  }
  double rel = den > 0 ? std::sqrt(num / den) : 0.0;
  std::printf("path,grid,spokes,seconds,rel_err\n");
  std::printf("direct,%d,%d,%.6f,0\n", grid, spokes, td);
  std::printf("gridding,%d,%d,%.6f,%.3e\n", grid, spokes, tg, rel);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion-resolved radial MRI reconstruction with Gaussian fields"};
  app.require_subcommand(1);

  std::string config_path, preset, out_dir, kspace_path, bins_out, recon_dir, truth_dir;
  std::string rois_path, out_csv, volume_path, plane = "coronal", out_png;
  int n_states = 6, threads = 0, slice = -1, bench_grid = 32, bench_spokes = 500;
  int bench_samples = 0, kernel_width = 8;
  double cutoff = 0.75;
  bool volumetric = false;
  std::string nufft_path = "gridding";

  auto* sim = app.add_subcommand("simulate", "Simulate a breathing phantom acquisition");
  sim->add_option("--config", config_path, "Reconstruction config JSON");
  sim->add_option("--preset", preset, "Named preset config");
  sim->add_option("--out", out_dir, "Output directory")->required();

  auto* gate = app.add_subcommand("gate", "Respiratory binning from DC self-gating");
  gate->add_option("--kspace", kspace_path, "k-space file")->required();
  gate->add_option("--states", n_states, "Number of motion states");
  gate->add_option("--cutoff", cutoff, "Low-pass cutoff in Hz");
  gate->add_option("--out", bins_out, "Output bins JSON")->required();

  auto* rec = app.add_subcommand("reconstruct", "Train the motion-resolved reconstruction");
  rec->add_option("--config", config_path, "Reconstruction config JSON");
  rec->add_option("--preset", preset, "Named preset config");
  rec->add_option("--kspace", kspace_path, "Directory with kspace.bin/trajectory.bin/coils.gsmr")
      ->required();
  rec->add_option("--out", out_dir, "Output directory")->required();
  rec->add_option("--threads", threads, "Worker threads (0 = hardware)");
  rec->add_option("--nufft", nufft_path, "NUFFT path: gridding|direct");
  rec->add_option("--kernel-width", kernel_width, "Gridding kernel width (even)");

  auto* ev = app.add_subcommand("evaluate", "Metrics against ground truth");
  ev->add_option("--recon", recon_dir, "Reconstruction directory")->required();
  ev->add_option("--truth", truth_dir, "Ground-truth directory")->required();
  ev->add_option("--rois", rois_path, "ROI definition JSON")->required();
  ev->add_option("--out", out_csv, "Output report CSV")->required();
  ev->add_flag("--volumetric", volumetric, "Full-volume metrics instead of one coronal slice");
  ev->add_option("--slice", slice, "Coronal slice index (default: center)");

  auto* ren = app.add_subcommand("render", "Render a slice to PNG");
  ren->add_option("--volume", volume_path, "Volume file")->required();
  ren->add_option("--plane", plane, "coronal|sagittal|axial");
  ren->add_option("--slice", slice, "Slice index (default: center)");
  ren->add_option("--out", out_png, "Output PNG")->required();

  auto* bench = app.add_subcommand("nufft-bench", "Benchmark NUFFT paths");
  bench->add_option("--grid", bench_grid, "Grid size per axis");
  bench->add_option("--spokes", bench_spokes, "Number of spokes");
  bench->add_option("--samples", bench_samples, "Samples per spoke (default grid/2)");
  bench->add_option("--kernel-width", kernel_width, "Gridding kernel width (even)");

  auto* pre = app.add_subcommand("presets", "List or dump preset configs");
  pre->add_option("--name", preset, "Dump one preset as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      cmd_simulate(load_config_arg(config_path, preset), out_dir);
    } else if (gate->parsed()) {
      RadialKSpace ks = read_kspace(kspace_path);
      write_bins(bins_out, gate_kspace(ks, n_states, cutoff));
      std::cout << "wrote " << bins_out << "\n";
    } else if (rec->parsed()) {
      set_num_threads(threads);
      NufftOptions nopt;
      nopt.path = nufft_path == "direct" ? NufftPath::direct : NufftPath::gridding;
      nopt.kernel_width = kernel_width;
      cmd_reconstruct(load_config_arg(config_path, preset), kspace_path, out_dir, nopt);
    } else if (ev->parsed()) {
      cmd_evaluate(recon_dir, truth_dir, rois_path, out_csv, volumetric, slice);
    } else if (ren->parsed()) {
      cmd_render(volume_path, plane, slice, out_png);
    } else if (bench->parsed()) {
      cmd_nufft_bench(bench_grid, bench_spokes, bench_samples, kernel_width);
    } else if (pre->parsed()) {
      if (preset.empty()) {
        for (const auto& name : preset_names()) std::cout << name << "\n";
      } else {
        std::cout << to_json(preset_config(preset)).dump(2) << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
