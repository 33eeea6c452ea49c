#pragma once

// Run configuration read from "section.key = value" lines. '#' starts a
// comment. Unknown keys and malformed values are rejected with the line
// number; every settings block is validated after loading.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "ddvo/ddvo.hpp"
#include "ddvo/dvo.hpp"
#include "ddvo/errors.hpp"
#include "ddvo/gradcheck.hpp"
#include "ddvo/losses.hpp"
#include "ddvo/synth.hpp"
#include "ddvo/training.hpp"

namespace ddvo {

struct RunConfig {
  DvoSettings dvo;
  DdvoSettings ddvo;
  LossWeights loss;
  TrainConfig train;
  GradcheckOptions gradcheck;  // seed and grad_through_jacobian come from the command line and ddvo
  SceneSpec synth;
  Pose6D synth_motion;  // reference to first rendered view; the second uses the inverse
  std::optional<CameraIntrinsics> camera;

  RunConfig() {
    synth_motion.t = Vec3(0.03, 0.0, 0.0);
    synth_motion.omega = Vec3(0.0, 0.004, 0.0);
  }

  void validate() const {
    dvo.validate();
    ddvo.validate();
    loss.validate();
    train.validate();
    gradcheck.validate();
    synth.validate();
    if (camera && !camera->valid()) {
      throw ConfigError("camera.fx, camera.fy, camera.cx and camera.cy must all be set, with positive focal lengths");
    }
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter>& config_keys() {
  static const std::map<std::string, Setter> keys = [] {
    std::map<std::string, Setter> k;
    auto real = [&k](const std::string& name, auto member) {
      k[name] = [member](RunConfig& c, const std::string& key, const std::string& v) { member(c) = parse_real(key, v); };
    };
    auto integer = [&k](const std::string& name, auto member) {
      k[name] = [member](RunConfig& c, const std::string& key, const std::string& v) {
        member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_int(key, v));
      };
    };
    auto boolean = [&k](const std::string& name, auto member) {
      k[name] = [member](RunConfig& c, const std::string& key, const std::string& v) { member(c) = parse_bool(key, v); };
    };

    integer("dvo.levels", [](RunConfig& c) -> int& { return c.dvo.levels; });
    integer("dvo.max_iters_per_level", [](RunConfig& c) -> int& { return c.dvo.max_iters_per_level; });
    real("dvo.step_norm_tol", [](RunConfig& c) -> double& { return c.dvo.step_norm_tol; });
    k["dvo.damping"] = [](RunConfig& c, const std::string& key, const std::string& v) {
      c.dvo.damping = v == "auto" ? std::nullopt : std::optional<double>(parse_real(key, v));
    };

    integer("ddvo.unroll_iters", [](RunConfig& c) -> int& { return c.ddvo.unroll_iters; });
    integer("ddvo.levels", [](RunConfig& c) -> int& { return c.ddvo.levels; });
    k["ddvo.damping"] = [](RunConfig& c, const std::string& key, const std::string& v) {
      c.ddvo.damping = v == "auto" ? std::nullopt : std::optional<double>(parse_real(key, v));
    };
    boolean("ddvo.grad_through_jacobian", [](RunConfig& c) -> bool& { return c.ddvo.grad_through_jacobian; });

    real("loss.lambda_prior", [](RunConfig& c) -> double& { return c.loss.lambda_prior; });
    real("loss.ssim_weight", [](RunConfig& c) -> double& { return c.loss.ssim_weight; });
    real("loss.ssim_c1", [](RunConfig& c) -> double& { return c.loss.ssim_c1; });
    real("loss.ssim_c2", [](RunConfig& c) -> double& { return c.loss.ssim_c2; });

    k["train.mode"] = [](RunConfig& c, const std::string&, const std::string& v) { c.train.mode = pose_mode_from_string(v); };
    boolean("train.normalize_depth", [](RunConfig& c) -> bool& { return c.train.normalize_depth; });
    integer("train.steps", [](RunConfig& c) -> int& { return c.train.steps; });
    real("train.lr", [](RunConfig& c) -> double& { return c.train.lr; });
    real("train.pose_lr", [](RunConfig& c) -> double& { return c.train.pose_lr; });
    integer("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    integer("train.hybrid_warmup_steps", [](RunConfig& c) -> int& { return c.train.hybrid_warmup_steps; });
    integer("train.hybrid_levels", [](RunConfig& c) -> int& { return c.train.hybrid_levels; });
    integer("train.hybrid_iters", [](RunConfig& c) -> int& { return c.train.hybrid_iters; });

    integer("gradcheck.instances", [](RunConfig& c) -> int& { return c.gradcheck.instances; });
    integer("gradcheck.size", [](RunConfig& c) -> int& { return c.gradcheck.size; });
    integer("gradcheck.unroll_iters", [](RunConfig& c) -> int& { return c.gradcheck.unroll_iters; });
    real("gradcheck.step", [](RunConfig& c) -> double& { return c.gradcheck.step; });
    real("gradcheck.ddvo_tolerance", [](RunConfig& c) -> double& { return c.gradcheck.ddvo_tolerance; });
    real("gradcheck.loss_tolerance", [](RunConfig& c) -> double& { return c.gradcheck.loss_tolerance; });

    k["synth.kind"] = [](RunConfig& c, const std::string&, const std::string& v) { c.synth.kind = scene_kind_from_string(v); };
    integer("synth.seed", [](RunConfig& c) -> std::uint64_t& { return c.synth.seed; });
    integer("synth.width", [](RunConfig& c) -> int& { return c.synth.width; });
    integer("synth.height", [](RunConfig& c) -> int& { return c.synth.height; });
    integer("synth.channels", [](RunConfig& c) -> int& { return c.synth.channels; });
    real("synth.z_min", [](RunConfig& c) -> double& { return c.synth.z_min; });
    real("synth.z_max", [](RunConfig& c) -> double& { return c.synth.z_max; });
    real("synth.min_wavelength", [](RunConfig& c) -> double& { return c.synth.min_wavelength; });
    real("synth.max_wavelength", [](RunConfig& c) -> double& { return c.synth.max_wavelength; });
    integer("synth.texture_waves", [](RunConfig& c) -> int& { return c.synth.texture_waves; });
    real("synth.fx", [](RunConfig& c) -> double& { return c.synth.camera.fx; });
    real("synth.fy", [](RunConfig& c) -> double& { return c.synth.camera.fy; });
    real("synth.cx", [](RunConfig& c) -> double& { return c.synth.camera.cx; });
    real("synth.cy", [](RunConfig& c) -> double& { return c.synth.camera.cy; });
    const char* motion[] = {"synth.tx", "synth.ty", "synth.tz", "synth.wx", "synth.wy", "synth.wz"};
    for (int i = 0; i < 6; ++i) {
      k[motion[i]] = [i](RunConfig& c, const std::string& key, const std::string& v) {
        (i < 3 ? c.synth_motion.t(i) : c.synth_motion.omega(i - 3)) = parse_real(key, v);
      };
    }

    const char* cam[] = {"camera.fx", "camera.fy", "camera.cx", "camera.cy"};
    for (int i = 0; i < 4; ++i) {
      k[cam[i]] = [i](RunConfig& c, const std::string& key, const std::string& v) {
        // Unset entries stay invalid so a partial camera is rejected.
        const double nan = std::numeric_limits<double>::quiet_NaN();
        if (!c.camera) c.camera = CameraIntrinsics{0.0, 0.0, nan, nan};
        double* f[] = {&c.camera->fx, &c.camera->fy, &c.camera->cx, &c.camera->cy};
        *f[i] = parse_real(key, v);
      };
    }
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Applies one "section.key = value" assignment.
inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& keys = detail::config_keys();
  const auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->second(cfg, key, value);
}

/// Parses configuration text on top of `base`.
inline RunConfig parse_config(const std::string& text, const std::string& origin = "<config>", RunConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'section.key = value'");
    }
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    try {
      apply_setting(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.train.weights = base.loss;
  base.train.ddvo = base.ddvo;
  base.validate();
  return base;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ImageIoError(path, 0, "cannot open configuration file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace ddvo
