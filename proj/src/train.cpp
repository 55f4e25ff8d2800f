// SPDX-License-Identifier: Apache-2.0
#include "modem/train.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "modem/image.hpp"
#include "modem/losses.hpp"
#include "modem/ops.hpp"

namespace modem::train {

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

/// Crops a patch at (top, left) and optionally mirrors it horizontally.
Tensor crop(const Tensor &img, std::size_t top, std::size_t left, std::size_t size, bool flip) {
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out({c, size, size});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < size; ++i)
            for (std::size_t j = 0; j < size; ++j) {
                const std::size_t src = flip ? left + size - 1 - j : left + j;
                out[(ch * size + i) * size + j] = img[(ch * h + top + i) * w + src];
            }
    return out;
}

void set_trainable(const nn::ParamList &params, bool on) {
    for (Parameter *p : params) p->trainable = on;
}

}  // namespace

std::string csv_header() { return "step,l1,l_cor,l_kl,total,lr\n"; }

std::string csv_row(const LossRow &r) {
    return std::to_string(r.step) + "," + num(r.loss.l1) + "," + num(r.loss.l_cor) + "," + num(r.loss.l_kl) + "," +
           num(r.loss.total) + "," + num(r.lr) + "\n";
}

ad::Var objective(ad::Tape &tape, const nn::Modem &model, int stage, const Tensor &lq, const Tensor &gt,
                  bool use_kl, LossReport &report) {
    ad::Var vlq = tape.constant(lq), vgt = tape.constant(gt);
    nn::Priors teacher;
    if (stage == 1 || use_kl) teacher = model.teacher(tape, ad::concat0(vlq, vgt));
    nn::Priors priors = teacher;
    if (stage == 2) {
        if (!model.student) throw ContractError("second-stage objective needs the degraded-only estimator");
        priors = (*model.student)(tape, vlq);
    }
    ad::Var out = model.backbone(tape, vlq, priors);
    bool flat = false;
    ad::Var l1 = loss::l1(out, vgt);
    ad::Var cor = loss::correlation(out, vgt, &flat);
    ad::Var total = ad::add(l1, cor);
    report.l1 = l1.value()[0];
    report.l_cor = cor.value()[0];
    report.degenerate = flat;
    report.l_kl = 0.0;
    if (stage == 2 && use_kl) {
        ad::Var kl = loss::kl_divergence(teacher.z_tilde, priors.z_tilde);
        report.l_kl = kl.value()[0];
        total = ad::add(total, kl);
    }
    report.total = total.value()[0];
    return total;
}

Trainer::Trainer(nn::Modem &model, TrainConfig cfg, const synth::Dataset &data)
    : model_(model), cfg_(std::move(cfg)), data_(data), opt_(model.parameters(), cfg_.adam) {
    if (cfg_.stage != 1 && cfg_.stage != 2) throw std::invalid_argument("stage must be 1 or 2");
    if (cfg_.batch == 0) throw std::invalid_argument("batch must be positive");
    if (data_.train.empty()) throw std::invalid_argument("training set is empty");
    cfg_.schedule.validate();
    const std::size_t size = data_.train.front().gt.dim(1);
    if (cfg_.patch == 0 || cfg_.patch > size)
        throw std::invalid_argument("patch " + std::to_string(cfg_.patch) + " does not fit images of size " +
                                    std::to_string(size));
    set_trainable(model_.backbone_parameters(), !(cfg_.stage == 2 && cfg_.freeze_backbone));
    set_trainable(model_.teacher_parameters(), cfg_.stage == 1);
    if (cfg_.stage == 2) {
        if (!model_.student) throw ContractError("second stage needs the degraded-only estimator");
        set_trainable(model_.student_parameters(), true);
    }
}

LossRow Trainer::step() {
    for (const Parameter *p : model_.parameters())
        if (!p->value.all_finite())
            throw TrainingDiverged("training diverged before step " + std::to_string(step_) + ": parameter " +
                                   p->name + " is not finite");
    const std::size_t size = data_.train.front().gt.dim(1);
    std::size_t patch = cfg_.patch;
    if (cfg_.progressive_patch && step_ < cfg_.iterations / 2) patch = std::max<std::size_t>(cfg_.patch / 2, 8);
    patch = std::min(patch, size);

    std::mt19937_64 rng(synth::sample_seed(cfg_.seed, step_));
    std::uniform_int_distribution<std::size_t> pick(0, data_.train.size() - 1), offset(0, size - patch);
    std::bernoulli_distribution flip(0.5);

    LossRow row;
    row.step = step_;
    row.lr = cfg_.schedule.at(step_);
    optim::GradMap grads;
    const double inv = 1.0 / static_cast<double>(cfg_.batch);
    for (std::size_t b = 0; b < cfg_.batch; ++b) {
        const synth::SynthSample &s = data_.train[pick(rng)];
        const std::size_t top = offset(rng), left = offset(rng);
        const bool mirror = flip(rng);
        ad::Tape tape;
        LossReport r;
        ad::Var loss = objective(tape, model_, cfg_.stage, crop(s.lq, top, left, patch, mirror),
                                 crop(s.gt, top, left, patch, mirror), cfg_.use_kl, r);
        tape.backward(loss);
        for (auto &[p, g] : tape.param_grads()) {
            auto [it, fresh] = grads.try_emplace(p, ops::scale(g, inv));
            if (!fresh) it->second = ops::add(it->second, ops::scale(g, inv));
        }
        row.loss.l1 += r.l1 * inv;
        row.loss.l_cor += r.l_cor * inv;
        row.loss.l_kl += r.l_kl * inv;
        row.loss.total += r.total * inv;
        row.loss.degenerate = row.loss.degenerate || r.degenerate;
    }
    bool finite = std::isfinite(row.loss.total);
    for (const auto &[p, g] : grads) finite = finite && g.all_finite();
    if (!finite)
        throw TrainingDiverged("training diverged at step " + std::to_string(step_) + ": l1=" + num(row.loss.l1) +
                               " l_cor=" + num(row.loss.l_cor) + " l_kl=" + num(row.loss.l_kl) +
                               " total=" + num(row.loss.total) + " lr=" + num(row.lr));
    opt_.step(grads, row.lr);
    ++step_;
    return row;
}

double Trainer::probe_loss() const {
    const std::size_t n = std::min(cfg_.probe, data_.train.size());
    if (n == 0) return 0.0;
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ad::Tape tape;
        LossReport r;
        objective(tape, model_, cfg_.stage, data_.train[i].lq, data_.train[i].gt, cfg_.use_kl, r);
        total += r.total;
    }
    return total / static_cast<double>(n);
}

void Trainer::save(const std::filesystem::path &path) const {
    save_checkpoint(path, snapshot(stage_parameters(model_, cfg_.stage), static_cast<std::uint8_t>(cfg_.stage)));
    Checkpoint state;
    state.stage = static_cast<std::uint8_t>(cfg_.stage);
    const auto moments = opt_.state();
    for (const auto &[n, t] : moments.m) state.tensors.emplace_back("m/" + n, t);
    for (const auto &[n, t] : moments.v) state.tensors.emplace_back("v/" + n, t);
    state.tensors.emplace_back("step", Tensor::scalar(static_cast<double>(step_)));
    state.tensors.emplace_back("optimizer_steps", Tensor::scalar(static_cast<double>(moments.steps)));
    save_checkpoint(path.string() + ".optim", state);
}

void Trainer::resume(const std::filesystem::path &path) {
    const Checkpoint weights = load_checkpoint(path);
    if (weights.stage != cfg_.stage)
        throw FormatError("checkpoint is from stage " + std::to_string(weights.stage) + ", trainer runs stage " +
                          std::to_string(cfg_.stage));
    restore(weights, stage_parameters(model_, cfg_.stage));
    const Checkpoint state = load_checkpoint(path.string() + ".optim");
    optim::AdamW::Moments m;
    for (const auto &[n, t] : state.tensors) {
        if (n.rfind("m/", 0) == 0) m.m.emplace_back(n.substr(2), t);
        if (n.rfind("v/", 0) == 0) m.v.emplace_back(n.substr(2), t);
    }
    const Tensor *step = state.find("step"), *steps = state.find("optimizer_steps");
    if (!step || !steps) throw FormatError("optimizer state lacks its step counters");
    m.steps = static_cast<std::size_t>((*steps)[0]);
    try {
        opt_.load_state(m);
    } catch (const std::invalid_argument &e) {
        throw FormatError(e.what());
    }
    step_ = static_cast<std::size_t>((*step)[0]);
}

Tensor restore_image(const nn::Modem &model, const Tensor &lq, const Tensor *gt) {
    ad::Tape tape;
    ad::Var vlq = tape.constant(lq);
    nn::Priors priors;
    if (gt) {
        priors = model.teacher(tape, ad::concat0(vlq, tape.constant(*gt)));
    } else {
        if (!model.student) throw ContractError("a first-stage model restores only with the ground truth supplied");
        priors = (*model.student)(tape, vlq);
    }
    return image::clamp01(model.backbone(tape, vlq, priors).value());
}

EvalReport evaluate(const nn::Modem &model, const std::vector<synth::SynthSample> &samples, bool with_gt) {
    EvalReport r;
    for (const auto &s : samples) {
        const Tensor out = restore_image(model, s.lq, with_gt ? &s.gt : nullptr);
        r.psnr_degraded += metrics::psnr(s.lq, s.gt);
        r.psnr_restored += metrics::psnr(out, s.gt);
        r.ssim_degraded += metrics::ssim(s.lq, s.gt);
        r.ssim_restored += metrics::ssim(out, s.gt);
        ++r.count;
    }
    if (r.count) {
        const double n = static_cast<double>(r.count);
        r.psnr_degraded /= n;
        r.psnr_restored /= n;
        r.ssim_degraded /= n;
        r.ssim_restored /= n;
    }
    return r;
}

RunResult run(nn::Modem &model, const TrainConfig &cfg, const synth::Dataset &data,
              const std::function<void(const LossRow &)> &on_row) {
    Trainer trainer(model, cfg, data);
    RunResult res;
    res.probe_start = trainer.probe_loss();
    for (std::size_t i = 0; i < cfg.iterations; ++i) {
        res.curve.push_back(trainer.step());
        if (on_row) on_row(res.curve.back());
    }
    res.probe_end = trainer.probe_loss();
    res.eval = evaluate(model, data.held_out, cfg.stage == 1);
    return res;
}

nn::ParamList stage_parameters(nn::Modem &model, int stage) {
    if (stage == 2) return model.parameters();
    nn::ParamList out = model.backbone_parameters();
    for (Parameter *p : model.teacher_parameters()) out.push_back(p);
    return out;
}

void prepare_stage2(nn::Modem &model, const Checkpoint &stage1) {
    if (stage1.stage != 1)
        throw FormatError("second stage starts from a stage-1 checkpoint, got stage " + std::to_string(stage1.stage));
    restore(stage1, stage_parameters(model, 1));
    model.init_student_from_teacher();
}

std::unique_ptr<nn::Modem> load_model(const Checkpoint &ckpt, const nn::ModelConfig &cfg) {
    if (ckpt.stage != 1 && ckpt.stage != 2)
        throw FormatError("checkpoint has unknown stage " + std::to_string(ckpt.stage));
    auto model = std::make_unique<nn::Modem>(cfg, 0, ckpt.stage == 2);
    restore(ckpt, stage_parameters(*model, ckpt.stage));
    return model;
}

}  // namespace modem::train
