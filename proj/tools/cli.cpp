#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>

#include <CLI11.hpp>
#include <omp.h>

#include "lsgcpd/bench.hpp"
#include "lsgcpd/cloud.hpp"
#include "lsgcpd/config_io.hpp"
#include "lsgcpd/driver.hpp"
#include "lsgcpd/error.hpp"
#include "lsgcpd/se3.hpp"
#include "lsgcpd/surface.hpp"

namespace lsgcpd::cli {

namespace {

/// Thrown for bad flag values detected after CLI11 parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string show(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string show_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + show(v[i]);
  return s;
}

/// "--a_b,--a-b" for names containing underscores.
std::string flag_names(const std::string& name) {
  std::string dashed = name;
  std::replace(dashed.begin(), dashed.end(), '_', '-');
  return dashed == name ? "--" + name : "--" + name + ",--" + dashed;
}

/// Config-key flags of one subcommand; values stay raw until apply().
class KeyFlags {
 public:
  KeyFlags(CLI::App& app, const std::vector<std::string>& only = {}) {
    const Settings defaults;
    for (const auto& key : config_keys()) {
      if (!only.empty() && std::find(only.begin(), only.end(), key.name) == only.end()) continue;
      std::string& slot = values_[key.name];
      CLI::Option* opt = nullptr;
      if (key.kind == ConfigKey::Kind::Boolean) {
        opt = app.add_flag(flag_names(key.name), slot, key.help);
      } else {
        opt = app.add_option(flag_names(key.name), slot, key.help);
        opt->type_name(key.kind == ConfigKey::Kind::Real ? "FLOAT" : "INT");
      }
      opt->default_str(key.get(defaults));
      options_[key.name] = opt;
    }
  }

  void apply(Settings& settings) const {
    for (const auto& [name, opt] : options_) {
      if (opt->count() == 0) continue;
      try {
        find_config_key(name)->set(settings, values_.at(name));
      } catch (const std::invalid_argument& e) {
        throw UsageError("--" + name + ": " + e.what());
      }
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
};

struct Common {
  std::string config;
  int threads = 0;
  double voxel_size = 0.0;

  void add(CLI::App& app, bool with_config) {
    if (with_config) app.add_option("--config", config, "flat 'key = value' file; flags override it")->default_str("");
    app.add_option("--threads", threads, "worker thread cap (0 = runtime default)")->default_str("0");
    app.add_option("--voxel_size,--voxel-size", voxel_size, "voxel downsampling size in meters (0 = off)")
        ->default_str("0");
  }

  Settings settings(const KeyFlags& flags) const {
    Settings s;
    if (!config.empty()) s = load_settings(config, s);
    flags.apply(s);
    try {
      s.model.validate();
      s.em.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return s;
  }

  void activate() const {
    if (threads < 0) throw UsageError("--threads must be >= 0");
    if (voxel_size < 0.0) throw UsageError("--voxel_size must be >= 0");
    if (threads > 0) omp_set_num_threads(threads);
  }

  PointCloud load(const std::string& path) const {
    PointCloud cloud = load_cloud(path);
    return voxel_size > 0.0 ? voxel_downsample(cloud, voxel_size) : cloud;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rigid point-cloud registration with surface-aware Gaussian mixtures"};
  app.name("lsgcpd");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "print help for every subcommand");

  // register
  CLI::App* reg = app.add_subcommand("register", "estimate the transform taking --source onto --target");
  Common reg_common;
  std::string reg_source, reg_target, reg_out, reg_report, reg_init, reg_dump;
  reg->add_option("--source", reg_source, "source cloud (.ply/.xyz)")->required();
  reg->add_option("--target", reg_target, "target cloud (.ply/.xyz)")->required();
  reg->add_option("--out", reg_out, "output 4x4 transform file")->required();
  reg->add_option("--report", reg_report, "report path (default: <out>.json)")->default_str("");
  reg->add_option("--init", reg_init, "initial transform file (default: identity)")->default_str("");
  reg->add_option("--dump_p,--dump-p", reg_dump, "write the final correspondence matrix as CSV")->default_str("");
  reg_common.add(*reg, true);
  KeyFlags reg_keys(*reg);

  // annotate
  CLI::App* ann = app.add_subcommand("annotate", "estimate normals and surface variations");
  Common ann_common;
  std::string ann_input, ann_output;
  ann->add_option("--input", ann_input, "input cloud")->required();
  ann->add_option("--output", ann_output, "output cloud (PLY keeps variations)")->required();
  ann_common.add(*ann, true);
  KeyFlags ann_keys(*ann, {"neighbors", "trust_normals"});

  // corrupt
  CLI::App* cor = app.add_subcommand("corrupt", "add Gaussian noise and Gaussian outliers to a cloud");
  Common cor_common;
  std::string cor_input, cor_output;
  CorruptionSpec cor_spec;
  cor->add_option("--input", cor_input, "input cloud")->required();
  cor->add_option("--output", cor_output, "output cloud")->required();
  cor->add_option("--outlier_ratio,--outlier-ratio", cor_spec.outlier_ratio, "outliers appended per input point")
      ->default_str(show(cor_spec.outlier_ratio));
  cor->add_option("--noise_std,--noise-std", cor_spec.noise_std, "iid noise std (m)")
      ->default_str(show(cor_spec.noise_std));
  cor->add_option("--outlier_scale,--outlier-scale", cor_spec.outlier_scale, "outlier spread per cloud std")
      ->default_str(show(cor_spec.outlier_scale));
  cor->add_option("--seed", cor_spec.seed, "random seed")->default_str(std::to_string(cor_spec.seed));
  cor_common.add(*cor, false);

  // eval
  CLI::App* ev = app.add_subcommand("eval", "compare an estimated transform with ground truth");
  std::string ev_source, ev_est, ev_gt;
  ev->add_option("--source", ev_source, "source cloud the error is averaged over")->required();
  ev->add_option("--est", ev_est, "estimated transform file")->required();
  ev->add_option("--gt", ev_gt, "ground-truth transform file")->required();

  // sweep
  CLI::App* sw = app.add_subcommand("sweep", "corruption sweep with ground-truth metrics, one CSV row per run");
  Common sw_common;
  std::string sw_source, sw_target, sw_out, sw_mode = "axis";
  std::vector<double> sw_ratios{0.0}, sw_stds{0.0};
  SweepOptions sw_opts;
  double sw_outlier_scale = 1.0;
  sw->add_option("--source", sw_source, "source cloud")->required();
  sw->add_option("--target", sw_target, "target cloud (default: the source)")->default_str("");
  sw->add_option("--out", sw_out, "CSV output path")->required();
  sw->add_option("--outlier_ratios,--outlier-ratios", sw_ratios, "comma-separated outlier ratios")
      ->delimiter(',')
      ->default_str(show_list(sw_ratios));
  sw->add_option("--noise_stds,--noise-stds", sw_stds, "comma-separated noise stds (m)")
      ->delimiter(',')
      ->default_str(show_list(sw_stds));
  sw->add_option("--repeats", sw_opts.repeats, "runs per corruption setting")
      ->default_str(std::to_string(sw_opts.repeats));
  sw->add_option("--perturbation", sw_mode, "ground-truth pose: 'axis' (fixed angle, random axis) or 'uniform'")
      ->check(CLI::IsMember({"axis", "uniform"}))
      ->default_str(sw_mode);
  sw->add_option("--angle_deg,--angle-deg", sw_opts.perturbation.angle_deg, "rotation angle for 'axis' (deg)")
      ->default_str(show(sw_opts.perturbation.angle_deg));
  sw->add_option("--max_rotation,--max-rotation", sw_opts.perturbation.max_rotation,
                 "per-axis rotation bound for 'uniform' (rad)")
      ->default_str(show(sw_opts.perturbation.max_rotation));
  sw->add_option("--max_translation,--max-translation", sw_opts.perturbation.max_translation,
                 "per-axis translation bound for 'uniform' (m)")
      ->default_str(show(sw_opts.perturbation.max_translation));
  sw->add_option("--outlier_scale,--outlier-scale", sw_outlier_scale, "outlier spread per cloud std")
      ->default_str(show(sw_outlier_scale));
  sw->add_flag("--early_stop,--early-stop", sw_opts.early_stop, "stop runs once rot and trans errors are small")
      ->default_str("false");
  sw->add_option("--early_stop_rot_deg,--early-stop-rot-deg", sw_opts.early_stop_rot_deg,
                 "early-stop rotation threshold (deg)")
      ->default_str(show(sw_opts.early_stop_rot_deg));
  sw->add_option("--early_stop_trans_m,--early-stop-trans-m", sw_opts.early_stop_trans_m,
                 "early-stop translation threshold (m)")
      ->default_str(show(sw_opts.early_stop_trans_m));
  sw->add_flag("--eta_from_truth,--eta-from-truth", sw_opts.outlier_ratio_from_truth,
               "set outlier_ratio to the injected fraction r / (1 + r)")
      ->default_str("false");
  sw_common.add(*sw, true);
  KeyFlags sw_keys(*sw);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (reg->parsed()) {
      reg_common.activate();
      const Settings s = reg_common.settings(reg_keys);
      const PointCloud source = reg_common.load(reg_source);
      const PointCloud target = reg_common.load(reg_target);
      RegisterOptions opts;
      if (!reg_init.empty()) opts.initial = load_transform(reg_init);
      if (!reg_dump.empty()) {
        opts.on_final_correspondence = [&](const CorrespondenceMatrix& p) { write_correspondence_csv(p, reg_dump); };
      }
      const RegistrationReport report = register_clouds(source, target, s.model, s.em, opts);
      save_transform(report.transform, reg_out);
      save_report(report, reg_report.empty() ? reg_out + ".json" : reg_report);
      if (!report.converged) {
        err << "lsgcpd: not converged after " << report.iterations << " iterations\n";
        return kNotConverged;
      }
      return kOk;
    }
    if (ann->parsed()) {
      ann_common.activate();
      const Settings s = ann_common.settings(ann_keys);
      save_cloud(annotate_cloud(ann_common.load(ann_input), s.model.neighbors, s.model.trust_normals), ann_output);
      return kOk;
    }
    if (cor->parsed()) {
      cor_common.activate();
      if (cor_spec.outlier_ratio < 0.0 || cor_spec.noise_std < 0.0 || cor_spec.outlier_scale < 0.0) {
        throw UsageError("corruption parameters must be non-negative");
      }
      save_cloud(corrupt(cor_common.load(cor_input), cor_spec), cor_output);
      return kOk;
    }
    if (ev->parsed()) {
      const PointCloud source = load_cloud(ev_source);
      const RigidTransform est = load_transform(ev_est);
      const RigidTransform gt = load_transform(ev_gt);
      out << "error_m " << show(error_metric(source, est, gt)) << "\n"
          << "rot_err_deg " << show(rotation_error(est, gt)) << "\n"
          << "trans_err_m " << show(translation_error(est, gt)) << "\n";
      return kOk;
    }
    if (sw->parsed()) {
      sw_common.activate();
      const Settings s = sw_common.settings(sw_keys);
      if (sw_opts.repeats < 1) throw UsageError("--repeats must be >= 1");
      sw_opts.seed = s.em.seed;
      sw_opts.perturbation.mode =
          sw_mode == "axis" ? PerturbationSpec::Mode::RandomAxis : PerturbationSpec::Mode::Uniform;
      std::vector<CorruptionSpec> specs;
      for (double r : sw_ratios) {
        for (double sd : sw_stds) {
          if (r < 0.0 || sd < 0.0) throw UsageError("sweep ratios and stds must be non-negative");
          specs.push_back({r, sd, 0, sw_outlier_scale});
        }
      }
      const PointCloud source = sw_common.load(sw_source);
      const PointCloud target = sw_target.empty() ? source : sw_common.load(sw_target);
      run_sweep(source, target, specs, sw_opts, s.model, s.em, std::filesystem::path(sw_out));
      return kOk;
    }
  } catch (const UsageError& e) {
    err << "lsgcpd: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "lsgcpd: " << e.what() << "\n";
    return kDataError;
  } catch (const RegistrationError& e) {
    err << "lsgcpd: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "lsgcpd: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace lsgcpd::cli
