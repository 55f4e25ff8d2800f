// SPDX-License-Identifier: Apache-2.0
#include "modem/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "modem/checkpoint.hpp"
#include "modem/config.hpp"
#include "modem/image.hpp"
#include "modem/losses.hpp"
#include "modem/scan_order.hpp"
#include "modem/ssm.hpp"
#include "modem/train.hpp"
#include "modem/verify.hpp"

namespace modem::cli {

namespace {

constexpr double kPublishedParamsM = 19.96;

const char *kHelpFooter =
    "Exit codes: 0 success, 1 failure (verification or runtime), 2 usage error.\n"
    "CSV columns:\n"
    "  scan-compare: kind,height,width,mean,median,p95,block_depth,build_ms,gather_ms\n"
    "  train loss:   step,l1,l_cor,l_kl,total,lr\n"
    "MODEM_SEED overrides the training and data seeds of any config.";

/// Errors the user can fix by changing the command line.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::pair<std::size_t, std::size_t> parse_size(const std::string &s) {
    const auto x = s.find('x');
    auto digits = [](const std::string &t) { return !t.empty() && std::all_of(t.begin(), t.end(), ::isdigit); };
    if (x == std::string::npos || !digits(s.substr(0, x)) || !digits(s.substr(x + 1)) || s.size() > 16)
        throw UsageError("bad size '" + s + "' (expected HxW, e.g. 64x64)");
    const std::size_t h = std::stoul(s.substr(0, x)), w = std::stoul(s.substr(x + 1));
    if (h == 0 || w == 0) throw UsageError("size extents must be positive: " + s);
    if (h * w > (std::size_t{1} << 26)) throw UsageError("size " + s + " is too large");
    return {h, w};
}

std::vector<std::string> split(const std::string &s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, sep);)
        if (!item.empty()) out.push_back(item);
    return out;
}

config::RunConfig load_config(const std::string &path, const std::string &preset_name) {
    config::RunConfig cfg = path.empty() ? config::preset(preset_name) : config::load(path);
    config::apply_seed_override(cfg);
    return cfg;
}

std::filesystem::path sidecar(const std::filesystem::path &ckpt) { return ckpt.string() + ".json"; }

std::unique_ptr<nn::Modem> open_model(const std::string &ckpt_path, Checkpoint &ckpt) {
    ckpt = load_checkpoint(ckpt_path);
    std::string text;
    try {
        text = read_file(sidecar(ckpt_path));
    } catch (const std::exception &) {
        throw std::runtime_error("model config " + sidecar(ckpt_path).string() + " not found next to the checkpoint");
    }
    return train::load_model(ckpt, config::parse_model(text));
}

std::string fmt(double v, int precision = 4) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

// ---- scan-compare -----------------------------------------------------------

struct ScanCompareArgs {
    std::string size = "64x64";
    std::string kinds = "raster,continuous,local8,morton,hilbert";
    std::string out;
    int repeats = 5;
};

int scan_compare(const ScanCompareArgs &a, std::ostream &out) {
    const auto [h, w] = parse_size(a.size);
    std::vector<scan::ScanSpec> specs;
    for (const auto &k : split(a.kinds, ',')) {
        try {
            specs.push_back(scan::parse_scan(k));
        } catch (const std::exception &e) {
            throw UsageError(e.what());
        }
    }
    if (specs.empty()) throw UsageError("--kinds lists no scan kinds");
    const std::pair<std::size_t, std::size_t> size{h, w};
    const auto bench = scan::bench_orders({&size, 1}, specs, a.repeats);
    std::ostringstream csv;
    csv << "kind,height,width,mean,median,p95,block_depth,build_ms,gather_ms\n";
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto stats = scan::locality_stats(scan::build_order(h, w, specs[i]));
        csv << scan::to_string(specs[i]) << ',' << h << ',' << w << ',' << fmt(stats.mean, 6) << ','
            << fmt(stats.median, 1) << ',' << fmt(stats.p95, 1) << ',' << stats.block_depth << ','
            << fmt(bench[i].build_ms, 4) << ',' << fmt(bench[i].gather_ms, 4) << '\n';
    }
    if (a.out.empty())
        out << csv.str();
    else {
        write_file_atomic(a.out, csv.str());
        out << "wrote " << specs.size() << " rows to " << a.out << "\n";
    }
    return ok;
}

// ---- gradcheck --------------------------------------------------------------

struct GradcheckArgs {
    std::string config, preset = "toy", fault, only;
    double tolerance = 1e-4;
};

int gradcheck(const GradcheckArgs &a, std::ostream &out) {
    const auto cfg = load_config(a.config, a.preset);
    SuiteOptions opt;
    opt.tolerance = a.tolerance;
    opt.seed = cfg.train.seed;
    opt.scan = cfg.model.block.scan;
    opt.fault_op = a.fault;
    const auto &all = gradient_suite_blocks();
    for (const auto &b : split(a.only, ',')) {
        if (std::find(all.begin(), all.end(), b) == all.end()) throw UsageError("unknown block '" + b + "'");
        opt.only.push_back(b);
    }
    const auto report = run_gradient_suite(opt);
    std::vector<std::string> failed;
    for (const auto &b : report) {
        out << std::left << std::setw(16) << b.block << " worst_rel=" << std::scientific << std::setprecision(3)
            << b.result.max_rel_error << " checked=" << b.result.checked << " at=" << b.result.worst << "  "
            << (b.passed ? "ok" : "FAIL") << "\n";
        if (!b.passed) failed.push_back(b.block);
    }
    out << std::defaultfloat;
    if (failed.empty()) {
        out << "all " << report.size() << " blocks within " << a.tolerance << "\n";
        return ok;
    }
    std::string names;
    for (const auto &f : failed) names += (names.empty() ? "" : ", ") + f;
    out << "gradient check failed for: " << names << "\n";
    return failure;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    int stage = 1;
    std::string config, preset = "toy", from, out_dir;
    long iterations = -1;
    bool freeze_backbone = false, no_kl = false, quiet = false;
};

int train_cmd(const TrainArgs &a, std::ostream &out) {
    if (a.stage == 2 && a.from.empty()) throw UsageError("stage 2 needs --from <stage-1 checkpoint>");
    if (a.stage == 1 && !a.from.empty()) throw UsageError("--from is only used by stage 2");
    auto cfg = load_config(a.config, a.preset);
    cfg.train.stage = a.stage;
    if (a.iterations >= 0) cfg.train.iterations = static_cast<std::size_t>(a.iterations);
    if (a.freeze_backbone) cfg.train.freeze_backbone = true;
    if (a.no_kl) cfg.train.use_kl = false;
    if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
    const std::filesystem::path dir = cfg.out_dir;
    std::filesystem::create_directories(dir);

    const auto data = synth::make_dataset(cfg.data);
    write_file_atomic(dir / "manifest.json", synth::manifest_json(cfg.data, data));
    write_file_atomic(dir / ("config_stage" + std::to_string(a.stage) + ".json"), config::dump(cfg));

    nn::Modem model(cfg.model, cfg.train.seed, a.stage == 2);
    if (a.stage == 2) {
        const Checkpoint s1 = load_checkpoint(a.from);
        train::prepare_stage2(model, s1);
    }
    std::string csv = train::csv_header();
    const std::size_t every = std::max<std::size_t>(cfg.train.iterations / 20, 1);
    const auto res = train::run(model, cfg.train, data, [&](const train::LossRow &r) {
        csv += train::csv_row(r);
        if (!a.quiet && (r.step % every == 0 || r.step + 1 == cfg.train.iterations))
            out << "step " << r.step << " total " << fmt(r.loss.total, 5) << " l1 " << fmt(r.loss.l1, 5) << " l_cor "
                << fmt(r.loss.l_cor, 5) << " l_kl " << fmt(r.loss.l_kl, 5) << " lr " << r.lr << "\n";
    });
    const std::string tag = "stage" + std::to_string(a.stage);
    write_file_atomic(dir / ("loss_" + tag + ".csv"), csv);
    const auto ckpt_path = dir / (tag + ".ckpt");
    save_checkpoint(ckpt_path, snapshot(train::stage_parameters(model, a.stage), static_cast<std::uint8_t>(a.stage)));
    write_file_atomic(sidecar(ckpt_path), config::dump_model(cfg.model));

    nlohmann::ordered_json m;
    m["stage"] = a.stage;
    m["iterations"] = cfg.train.iterations;
    m["probe_loss_start"] = res.probe_start;
    m["probe_loss_end"] = res.probe_end;
    m["held_out"] = res.eval.count;
    m["psnr_degraded"] = res.eval.psnr_degraded;
    m["psnr_restored"] = res.eval.psnr_restored;
    m["ssim_degraded"] = res.eval.ssim_degraded;
    m["ssim_restored"] = res.eval.ssim_restored;
    write_file_atomic(dir / ("metrics_" + tag + ".json"), m.dump(2) + "\n");

    out << "checkpoint " << ckpt_path.string() << "\n"
        << "probe loss " << fmt(res.probe_start, 5) << " -> " << fmt(res.probe_end, 5) << "\n"
        << "held-out PSNR " << fmt(res.eval.psnr_degraded, 3) << " -> " << fmt(res.eval.psnr_restored, 3)
        << " dB, SSIM " << fmt(res.eval.ssim_degraded) << " -> " << fmt(res.eval.ssim_restored) << " ("
        << res.eval.count << " images, " << (a.stage == 1 ? "ground-truth prior" : "degraded-only prior") << ")\n";
    return ok;
}

// ---- restore ----------------------------------------------------------------

struct RestoreArgs {
    std::string checkpoint, in, out, ref, with_gt;
};

int restore_cmd(const RestoreArgs &a, std::ostream &out) {
    Checkpoint ckpt;
    const auto model = open_model(a.checkpoint, ckpt);
    const Tensor lq = image::read_image(a.in);
    if (lq.dim(0) != 3) throw std::runtime_error(a.in + " is not an RGB (P6) image");
    Tensor gt;
    if (!a.with_gt.empty()) {
        gt = image::read_image(a.with_gt);
        if (!gt.same_shape(lq)) throw std::runtime_error("--with-gt image size differs from the input");
    } else if (ckpt.stage == 1) {
        throw std::runtime_error("checkpoint is from stage 1; pass --with-gt <image> for the diagnostic mode");
    }
    const Tensor restored = train::restore_image(*model, lq, a.with_gt.empty() ? nullptr : &gt);
    image::write_ppm(a.out, restored);
    out << "wrote " << a.out << " (" << restored.dim(2) << "x" << restored.dim(1) << ")\n";
    if (!a.ref.empty()) {
        const Tensor ref = image::read_image(a.ref);
        if (!ref.same_shape(lq)) throw std::runtime_error("--ref image size differs from the input");
        const Tensor q = image::quantize(restored);
        out << "PSNR input " << fmt(metrics::psnr(lq, ref), 3) << " dB, restored " << fmt(metrics::psnr(q, ref), 3)
            << " dB\n";
        if (lq.dim(1) >= 11 && lq.dim(2) >= 11)
            out << "SSIM input " << fmt(metrics::ssim(lq, ref)) << ", restored " << fmt(metrics::ssim(q, ref)) << "\n";
    }
    return ok;
}

// ---- decompose --------------------------------------------------------------

struct DecomposeArgs {
    std::string checkpoint, in, out, with_gt;
    long layer = 0;
};

Tensor channel_mean_map(const Tensor &seq, const scan::ScanPermutation &order) {
    const std::size_t d = seq.dim(0), l = seq.dim(1);
    Tensor mean({1, l});
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t k = 0; k < l; ++k) mean[k] += seq.at(c, k) / static_cast<double>(d);
    return scan::scatter(mean, order);
}

Tensor normalized(const Tensor &m) {
    const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
    Tensor out(m.shape());
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < m.numel(); ++i) out[i] = range > 0 ? (m[i] - *lo) / range : 0.0;
    return out;
}

int decompose_cmd(const DecomposeArgs &a, std::ostream &out) {
    Checkpoint ckpt;
    auto model = open_model(a.checkpoint, ckpt);
    const std::size_t n = model->backbone.layers().size();
    if (a.layer < 0 || static_cast<std::size_t>(a.layer) >= n)
        throw UsageError("layer " + std::to_string(a.layer) + " out of range; valid layers are 0.." +
                         std::to_string(n - 1));
    const Tensor lq = image::read_image(a.in);
    if (lq.dim(0) != 3) throw std::runtime_error(a.in + " is not an RGB (P6) image");
    Tensor gt;
    if (!a.with_gt.empty()) gt = image::read_image(a.with_gt);
    else if (ckpt.stage == 1)
        throw std::runtime_error("checkpoint is from stage 1; pass --with-gt <image> for the diagnostic mode");

    nn::ScanTrace trace;
    model->backbone.set_trace(static_cast<std::size_t>(a.layer), &trace);
    train::restore_image(*model, lq, a.with_gt.empty() ? nullptr : &gt);
    model->backbone.set_trace(0, nullptr);

    const auto disc = ssm::zoh_discretize(trace.A, trace.delta, trace.B);
    const auto fwd = ssm::selective_scan(trace.seq, disc, trace.C, trace.D);
    const auto parts = ssm::decompose_output(trace.seq, disc, trace.C, trace.D);
    double worst = 0, first = 0;
    const std::size_t d = trace.seq.dim(0), l = trace.seq.dim(1);
    for (std::size_t c = 0; c < d; ++c) {
        first = std::max(first, std::abs(parts.longrange.at(c, 0)));
        for (std::size_t k = 0; k < l; ++k) {
            const double sum = parts.longrange.at(c, k) + parts.local.at(c, k) + trace.D[c] * trace.seq.at(c, k);
            worst = std::max(worst, std::abs(sum - fwd.y.at(c, k)));
        }
    }
    const std::filesystem::path dir = a.out;
    std::filesystem::create_directories(dir);
    const std::pair<const char *, const Tensor *> maps[] = {
        {"longrange.pgm", &parts.longrange}, {"local.pgm", &parts.local}, {"output.pgm", &fwd.y}};
    for (const auto &[name, t] : maps) image::write_pgm(dir / name, normalized(channel_mean_map(*t, trace.order)));
    out << "layer " << a.layer << " of " << n << ", input " << lq.dim(1) << "x" << lq.dim(2) << ", layer grid "
        << trace.order.height() << "x" << trace.order.width() << ", scan " << scan::to_string(model->config.block.scan)
        << "\n"
        << "identity longrange + local + D*x = y: max abs error " << std::scientific << std::setprecision(3) << worst
        << (worst <= 1e-12 ? " (ok)" : " (exceeds 1e-12)") << "\n"
        << "long-range term at the first scanned token: " << first << "\n"
        << std::defaultfloat << "wrote longrange.pgm, local.pgm, output.pgm to " << dir.string() << "\n";
    return worst <= 1e-12 && first == 0.0 ? ok : failure;
}

// ---- params -----------------------------------------------------------------

struct ParamsArgs {
    std::string config, preset = "toy";
};

int params_cmd(const ParamsArgs &a, std::ostream &out) {
    const auto cfg = load_config(a.config, a.preset);
    nn::Modem model(cfg.model, cfg.train.seed, false);
    nn::Backbone &b = model.backbone;
    auto count = [](auto &module) {
        nn::ParamList p;
        module.parameters(p);
        return nn::count_parameters(p);
    };
    auto group = [&](std::vector<nn::Mdsl> &g) {
        std::size_t s = 0;
        for (auto &m : g) s += count(m);
        return s;
    };
    std::vector<std::pair<std::string, std::size_t>> rows;
    rows.emplace_back("embed", count(b.embed));
    for (std::size_t l = 0; l < b.encoder.size(); ++l) {
        rows.emplace_back("encoder" + std::to_string(l), group(b.encoder[l]));
        rows.emplace_back("down" + std::to_string(l), count(b.down[l]));
    }
    rows.emplace_back("bottleneck", group(b.bottleneck));
    for (std::size_t l = b.decoder.size(); l-- > 0;) {
        rows.emplace_back("up" + std::to_string(l), count(b.up[l]));
        rows.emplace_back("fuse" + std::to_string(l), count(b.fuse[l]));
        rows.emplace_back("decoder" + std::to_string(l), group(b.decoder[l]));
    }
    rows.emplace_back("refine", group(b.refine));
    rows.emplace_back("output", count(b.output));
    std::size_t adapters = 0;
    for (auto &ad : b.adapters) adapters += count(ad);
    rows.emplace_back("adapters", adapters);
    const std::size_t backbone = count(b), ddem = count(model.teacher);
    for (const auto &[name, c] : rows) out << "  " << std::left << std::setw(12) << name << c << "\n";
    out << "backbone     " << backbone << "\n"
        << "ddem         " << ddem << "  (one estimator; stage 1 uses the 6-channel teacher, inference the student)\n"
        << "total        " << backbone + ddem << "  (" << fmt((backbone + ddem) / 1e6, 2) << " M)\n";
    if (config::dump_model(cfg.model) == config::dump_model(config::full_preset().model))
        out << "published    " << kPublishedParamsM << " M, delta " << fmt((backbone + ddem) / 1e6 - kPublishedParamsM, 3)
            << " M\n";
    return ok;
}

}  // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"Degradation-aware Morton-scan restoration toolkit", "modem"};
    app.footer(kHelpFooter);
    app.require_subcommand(1);

    ScanCompareArgs sc;
    auto *c_scan = app.add_subcommand("scan-compare", "Locality statistics and build/gather timing per scan order");
    c_scan->add_option("--size", sc.size, "Grid size HxW")->capture_default_str();
    c_scan->add_option("--kinds", sc.kinds, "Comma-separated scan kinds")->capture_default_str();
    c_scan->add_option("--repeats", sc.repeats, "Timing repeats (median reported)")->check(CLI::PositiveNumber);
    c_scan->add_option("--out", sc.out, "CSV output path (default stdout)");

    GradcheckArgs gc;
    auto *c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable block");
    c_grad->add_option("--config", gc.config, "Run config JSON");
    c_grad->add_option("--preset", gc.preset, "Preset when no config is given (toy|full)");
    c_grad->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();
    c_grad->add_option("--inject-fault", gc.fault, "Scale the backward of this primitive (negative control)");
    c_grad->add_option("--only", gc.only, "Comma-separated subset of blocks");

    TrainArgs tr;
    auto *c_train = app.add_subcommand("train", "Train stage 1 or 2 on the synthetic toy task");
    c_train->add_option("--stage", tr.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
    c_train->add_option("--config", tr.config, "Run config JSON");
    c_train->add_option("--preset", tr.preset, "Preset when no config is given (toy|full)");
    c_train->add_option("--from", tr.from, "Stage-1 checkpoint (stage 2)");
    c_train->add_option("--out", tr.out_dir, "Output directory (overrides config out_dir)");
    c_train->add_option("--iterations", tr.iterations, "Override the iteration count");
    c_train->add_flag("--freeze-backbone", tr.freeze_backbone, "Stage 2: train only the degraded-only estimator");
    c_train->add_flag("--no-kl", tr.no_kl, "Stage 2: drop the distillation term");
    c_train->add_flag("--quiet", tr.quiet, "No progress lines");

    RestoreArgs rs;
    auto *c_restore = app.add_subcommand("restore", "Restore a PPM image with a trained checkpoint");
    c_restore->add_option("--checkpoint", rs.checkpoint, "Checkpoint path")->required();
    c_restore->add_option("--in", rs.in, "Degraded PPM input")->required();
    c_restore->add_option("--out", rs.out, "Restored PPM output")->required();
    c_restore->add_option("--ref", rs.ref, "Clean reference; prints PSNR/SSIM");
    c_restore->add_option("--with-gt", rs.with_gt, "Ground truth for the first-stage estimator (diagnostic)");

    DecomposeArgs dc;
    auto *c_dec = app.add_subcommand("decompose", "Long-range, local and output maps of one scan layer");
    c_dec->add_option("--checkpoint", dc.checkpoint, "Checkpoint path")->required();
    c_dec->add_option("--in", dc.in, "PPM input")->required();
    c_dec->add_option("--layer", dc.layer, "Scan layer index in forward order")->required();
    c_dec->add_option("--out", dc.out, "Output directory")->required();
    c_dec->add_option("--with-gt", dc.with_gt, "Ground truth for the first-stage estimator (diagnostic)");

    ParamsArgs pa;
    auto *c_params = app.add_subcommand("params", "Per-module and total parameter counts");
    c_params->add_option("--config", pa.config, "Run config JSON");
    c_params->add_option("--preset", pa.preset, "Preset when no config is given (toy|full)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForAllHelp &) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::ParseError &e) {
        err << "error: " << e.what() << "\n" << "run 'modem --help' for usage\n";
        return usage;
    }

    try {
        if (*c_scan) return scan_compare(sc, out);
        if (*c_grad) return gradcheck(gc, out);
        if (*c_train) return train_cmd(tr, out);
        if (*c_restore) return restore_cmd(rs, out);
        if (*c_dec) return decompose_cmd(dc, out);
        if (*c_params) return params_cmd(pa, out);
    } catch (const UsageError &e) {
        err << "error: " << e.what() << "\n";
        return usage;
    } catch (const config::ConfigError &e) {
        err << "config error: " << e.what() << "\n";
        return usage;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return failure;
    }
    return usage;
}

}  // namespace modem::cli
