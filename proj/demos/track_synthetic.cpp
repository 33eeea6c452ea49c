// Frame-to-frame tracking along a rendered camera path. Each frame is aligned
// to its predecessor with the predecessor's true inverse depth; the chained
// poses are scored with snippet ATE.
//
// usage: demo_track_synthetic [out_dir]   (writes pred.txt and gt.txt)

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ddvo/all.hpp"

using namespace ddvo;

int main(int argc, char** argv) {
  SceneSpec spec;
  spec.kind = SceneKind::SmoothHeightField;
  spec.seed = 5;
  const Scene scene = make_scene(spec);
  const double z = 0.5 * (spec.z_min + spec.z_max);

  // Reference-to-frame poses along a gentle arc.
  constexpr int kFrames = 8;
  std::vector<Pose6D> path;
  for (int k = 0; k < kFrames; ++k) {
    Pose6D p;
    const double s = static_cast<double>(k);
    p.t = z * Vec3(-0.012 * s, 0.003 * std::sin(0.7 * s), -0.008 * s);
    p.omega = Vec3(0.0005 * s, 0.0015 * s, 0.0);
    path.push_back(p);
  }

  std::vector<RenderedView> views;
  for (const Pose6D& p : path) views.push_back(render_view(scene, p));

  DvoSettings dvo;
  dvo.levels = 3;
  Trajectory pred;
  Trajectory gt;
  Mat4 world_from_cam = Mat4::Identity();
  pred.push_back(world_from_cam);
  gt.push_back(path[0].matrix().inverse());
  std::printf("frame  rot_err_deg  trans_err_rel  residual\n");
  for (int k = 1; k < kFrames; ++k) {
    const RenderedView& ref = views[static_cast<std::size_t>(k - 1)];
    const RenderedView& src = views[static_cast<std::size_t>(k)];
    const DvoResult r = solve_coarse_to_fine(ref.image, ref.depth, src.image, spec.camera, Pose6D::identity(), dvo);
    // Ground-truth motion from frame k-1 to frame k.
    const Mat4 rel_gt = path[static_cast<std::size_t>(k)].matrix() * path[static_cast<std::size_t>(k - 1)].matrix().inverse();
    const Mat4 err = r.pose.matrix() * rel_gt.inverse();
    const double rot_err = rotation_log<double>(Mat3(err.topLeftCorner<3, 3>())).norm() * 180.0 / M_PI;
    const double trans_err = (r.pose.t - rel_gt.topRightCorner<3, 1>()).norm() / rel_gt.topRightCorner<3, 1>().norm();
    std::printf("%5d  %11.5f  %13.5f  %.3e\n", k, rot_err, trans_err, r.final_residual);
    world_from_cam = world_from_cam * r.pose.matrix().inverse();
    pred.push_back(world_from_cam);
    gt.push_back(path[static_cast<std::size_t>(k)].matrix().inverse());
  }

  const AteResult a = ate(pred, gt, 5);
  std::printf("ATE over %zu windows: mean %.3e std %.3e (scene depth %.1f)\n", a.per_window.size(), a.mean, a.std, z);

  if (argc > 1) {
    const std::filesystem::path dir(argv[1]);
    std::filesystem::create_directories(dir);
    write_kitti_trajectory((dir / "pred.txt").string(), pred);
    write_kitti_trajectory((dir / "gt.txt").string(), gt);
  }
  return 0;
}
