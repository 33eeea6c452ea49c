// Command-line front end: odometry, gradient checks, training demos,
// evaluation and synthetic fixtures.
//
// Exit codes: 0 success, 1 I/O, format or configuration error, 2 numerical
// failure (degenerate overlap, singular system, divergence, no valid pixels,
// length mismatch), 3 failing gradient check.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ddvo/all.hpp"

namespace {

using namespace ddvo;

constexpr int kExitIo = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitGradcheck = 3;

RunConfig config_from(const std::string& path) { return path.empty() ? parse_config("") : load_config(path); }

std::string csv_row(std::initializer_list<double> values) {
  std::string row;
  for (double v : values) {
    if (!row.empty()) row += ',';
    row += format_double(v);
  }
  return row;
}

// Three rows of the 3x4 pose matrix X_src = R X_ref + t.
void print_pose(const Pose6D& p) {
  const Mat4 m = p.matrix();
  for (int r = 0; r < 3; ++r) {
    std::string line;
    for (int c = 0; c < 4; ++c) {
      if (c) line += ' ';
      line += format_double(m(r, c));
    }
    std::cout << line << "\n";
  }
}

std::string camera_config(const CameraIntrinsics& k) {
  return "camera.fx = " + format_double(k.fx) + "\ncamera.fy = " + format_double(k.fy) +
         "\ncamera.cx = " + format_double(k.cx) + "\ncamera.cy = " + format_double(k.cy) + "\n";
}

struct OdometryArgs {
  std::string ref, depth, src, config, trajectory;
};

int cmd_odometry(const OdometryArgs& a) {
  const RunConfig cfg = config_from(a.config);
  const ImageBuffer ref = io::read_image(a.ref);
  const InverseDepthMap depth = io::read_pfm(a.depth);
  const ImageBuffer src = io::read_image(a.src);
  if (!ref.same_grid(src) || !ref.same_grid(depth) || depth.channels() != 1) {
    std::cerr << "odometry: " << a.ref << ", " << a.depth << " and " << a.src << " must share one grid\n";
    return kExitIo;
  }
  CameraIntrinsics k = default_camera(ref.width(), ref.height());
  if (cfg.camera) {
    k = *cfg.camera;
  } else {
    std::cerr << "odometry: no camera.* keys given, using the default synthetic camera\n";
  }
  const DvoResult r = solve_coarse_to_fine(ref, depth, src, k, Pose6D::identity(), cfg.dvo);
  print_pose(r.pose);
  std::cout << "final_residual " << format_double(r.final_residual) << "\n";
  std::cout << "valid_fraction " << format_double(r.valid_fraction) << "\n";
  std::cout << "iterations";
  for (int it : r.iterations_used) std::cout << ' ' << it;
  std::cout << "\n";
  if (!a.trajectory.empty()) {
    // Camera-to-world poses with the reference camera as the world frame.
    Trajectory t;
    t.push_back(Mat4::Identity());
    t.push_back(r.pose.matrix().inverse());
    write_kitti_trajectory(a.trajectory, t);
  }
  return 0;
}

int cmd_gradcheck(const std::string& config, std::uint64_t seed) {
  const RunConfig cfg = config_from(config);
  GradcheckOptions opt = cfg.gradcheck;
  opt.seed = seed;
  opt.grad_through_jacobian = cfg.ddvo.grad_through_jacobian;
  const auto rows = run_gradcheck(opt, cfg.loss);
  std::cout << "component,max_rel_error,tolerance,compared,excluded,status\n";
  bool ok = true;
  for (const GradcheckRow& r : rows) {
    std::cout << r.component << ',' << format_double(r.max_rel_error) << ',' << format_double(r.tolerance) << ','
              << r.compared << ',' << r.excluded << ',' << to_string(r.status) << "\n";
    ok = ok && r.status != GradcheckRow::Status::Fail;
  }
  return ok ? 0 : kExitGradcheck;
}

struct TrainArgs {
  std::string mode, normalize, config, out, depth_out, clip = "bundled";
};

int cmd_train_demo(const TrainArgs& a) {
  RunConfig cfg = config_from(a.config);
  if (!a.mode.empty()) cfg.train.mode = pose_mode_from_string(a.mode);
  if (!a.normalize.empty()) cfg.train.normalize_depth = a.normalize == "on";
  const SynthTriplet st = a.clip == "large-motion" ? bundled_large_motion_clip() : bundled_triplet();
  TrainInputs in{st.triplet.images, st.camera, std::nullopt};
  GroundTruth gt{st.triplet.depths, st.triplet.p21, st.triplet.p23};
  const TrainTrace trace = train_triplet(in, &gt, cfg.train);
  write_trace_csv(a.out, trace);
  if (!a.depth_out.empty() && !trace.final_depth[1].empty()) io::write_pfm(a.depth_out, trace.final_depth[1]);
  const TrainRecord* last = trace.records.empty() ? nullptr : &trace.records.back();
  if (last) {
    std::cout << "steps " << trace.records.size() << " final_total " << format_double(last->total)
              << " final_mean_inv_depth " << format_double(last->raw_mean_inv_depth) << " final_gt_error "
              << format_double(last->gt_error) << "\n";
  }
  if (trace.status == TrainTrace::Status::Diverged) {
    std::cerr << "train-demo: diverged: " << trace.message << "\n";
    return kExitNumeric;
  }
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, bool align, double cap) {
  const ImageBuffer pred = io::read_pfm(pred_path);
  const ImageBuffer gt = io::read_pfm(gt_path);
  const DepthMetrics m =
      depth_metrics(pred, gt, nullptr, align, cap > 0.0 ? std::optional<double>(cap) : std::nullopt);
  std::cout << "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,count\n";
  std::cout << csv_row({m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3}) << ',' << m.count
            << "\n";
  return 0;
}

int cmd_eval_ate(const std::string& pred_path, const std::string& gt_path, int snippet) {
  const AteResult r = ate(read_kitti_trajectory(pred_path), read_kitti_trajectory(gt_path), snippet);
  std::cout << "mean,std\n" << csv_row({r.mean, r.std}) << "\n";
  return 0;
}

// ref.ppm, depth.pfm (reference inverse depth), view1.ppm rendered at the
// configured motion, view2.ppm at its inverse, poses.txt (one 3x4 line per
// view, reference to view) and camera.cfg.
int cmd_synth(const std::string& config, const std::string& out_dir) {
  const RunConfig cfg = config_from(config);
  const Scene scene = make_scene(cfg.synth);
  const Pose6D p1 = cfg.synth_motion;
  const Pose6D p2 = invert(p1);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  io::write_pnm((dir / "ref.ppm").string(), scene.image);
  io::write_pfm((dir / "depth.pfm").string(), scene.depth);
  io::write_pnm((dir / "view1.ppm").string(), render_view(scene, p1).image);
  io::write_pnm((dir / "view2.ppm").string(), render_view(scene, p2).image);
  io::detail::write_atomically((dir / "poses.txt").string(),
                               format_kitti_pose(p1.matrix()) + "\n" + format_kitti_pose(p2.matrix()) + "\n");
  io::detail::write_atomically((dir / "camera.cfg").string(), camera_config(cfg.synth.camera));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Direct visual odometry and unsupervised depth training"};
  app.require_subcommand(1);

  OdometryArgs odo;
  auto* c_odo = app.add_subcommand("odometry", "Align a source image to a reference image with known inverse depth");
  c_odo->add_option("ref", odo.ref, "Reference image (PGM/PPM/PFM)")->required();
  c_odo->add_option("depth", odo.depth, "Reference inverse depth (PFM)")->required();
  c_odo->add_option("src", odo.src, "Source image")->required();
  c_odo->add_option("--config", odo.config, "Configuration file");
  c_odo->add_option("--trajectory", odo.trajectory, "Write both camera poses in KITTI format");

  std::string gc_config;
  std::uint64_t gc_seed = 0;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference checks of all analytic gradients");
  c_gc->add_option("--config", gc_config, "Configuration file");
  c_gc->add_option("--seed", gc_seed, "Instance seed");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train-demo", "Optimize depth on a bundled synthetic triplet");
  c_tr->add_option("--mode", tr.mode, "fixed-pose-gt, pose-param, ddvo, ddvo-hybrid or dvo-em")
      ->check(CLI::IsMember({"fixed-pose-gt", "pose-param", "ddvo", "ddvo-hybrid", "dvo-em"}));
  c_tr->add_option("--normalize", tr.normalize, "Depth normalization")->check(CLI::IsMember({"on", "off"}));
  c_tr->add_option("--config", tr.config, "Configuration file");
  c_tr->add_option("--clip", tr.clip, "Which bundled triplet")->check(CLI::IsMember({"bundled", "large-motion"}));
  c_tr->add_option("--out", tr.out, "Trace CSV")->required();
  c_tr->add_option("--depth-out", tr.depth_out, "Final inverse depth of the middle frame (PFM)");

  std::string ev_pred, ev_gt;
  bool ev_align = false;
  double ev_cap = 0.0;
  auto* c_ev = app.add_subcommand("eval", "Depth metrics of a predicted depth map");
  c_ev->add_option("pred", ev_pred, "Predicted depth (PFM)")->required();
  c_ev->add_option("gt", ev_gt, "Ground-truth depth (PFM); non-positive pixels are ignored")->required();
  c_ev->add_flag("--align", ev_align, "Median scale alignment");
  c_ev->add_option("--cap", ev_cap, "Ignore ground truth at or beyond this depth");

  std::string ate_pred, ate_gt;
  int ate_snippet = 5;
  auto* c_ate = app.add_subcommand("eval-ate", "Absolute trajectory error over short snippets");
  c_ate->add_option("pred", ate_pred, "Predicted trajectory (KITTI format)")->required();
  c_ate->add_option("gt", ate_gt, "Ground-truth trajectory (KITTI format)")->required();
  c_ate->add_option("--snippet", ate_snippet, "Frames per window");

  std::string sy_config, sy_out;
  auto* c_sy = app.add_subcommand("synth", "Render a synthetic scene and two views");
  c_sy->add_option("--config", sy_config, "Configuration file (synth.* keys)");
  c_sy->add_option("--out", sy_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitIo;
  }

  try {
    if (*c_odo) return cmd_odometry(odo);
    if (*c_gc) return cmd_gradcheck(gc_config, gc_seed);
    if (*c_tr) return cmd_train_demo(tr);
    if (*c_ev) return cmd_eval(ev_pred, ev_gt, ev_align, ev_cap);
    if (*c_ate) return cmd_eval_ate(ate_pred, ate_gt, ate_snippet);
    if (*c_sy) return cmd_synth(sy_config, sy_out);
  } catch (const ImageIoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ShapeMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ddvo::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return 0;
}
