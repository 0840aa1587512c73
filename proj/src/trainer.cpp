#include "oarseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "oarseg/postprocess.hpp"
#include "oarseg/preprocess.hpp"
#include "oarseg/rng.hpp"

namespace oarseg {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("train: betas must lie in [0,1)");
    if (folds < 2) throw std::invalid_argument("train: folds must be >= 2");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (plateau_patience < 1 || early_stop_patience < 1)
        throw std::invalid_argument("train: patience values must be >= 1");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0))
        throw std::invalid_argument("train: decay_factor must be in (0,1]");
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

void adam_step(ParameterSet& params, AdamState& state, double lr, double beta1, double beta2,
               double eps) {
    for (auto& [name, p] : params) {
        if (!p.has_grad())
            throw std::invalid_argument("adam_step: missing gradient for parameter '" + name + "'");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (auto& [name, p] : params) {
        Tensor& m = state.m[name];
        Tensor& v = state.v[name];
        if (!m.defined()) m = Tensor::zeros(p.shape());
        if (!v.defined()) v = Tensor::zeros(p.shape());
        double* mp = m.data();
        double* vp = v.data();
        double* theta = p.data();
        const double* g = p.grad();
        const int64_t n = p.numel();
        for (int64_t i = 0; i < n; ++i) {
            mp[i] = beta1 * mp[i] + (1.0 - beta1) * g[i];
            vp[i] = beta2 * vp[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = mp[i] / bc1;
            const double vhat = vp[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// data
// ---------------------------------------------------------------------------

std::vector<FoldSplit> five_fold_split(const std::vector<std::string>& case_ids, int folds,
                                       uint64_t seed) {
    if (folds < 2) throw std::invalid_argument("five_fold_split: folds must be >= 2");
    if (static_cast<int>(case_ids.size()) < folds)
        throw std::invalid_argument("five_fold_split: " + std::to_string(case_ids.size()) +
                                    " cases cannot fill " + std::to_string(folds) + " folds");
    std::vector<std::string> shuffled = case_ids;
    Rng rng(seed);
    shuffle(shuffled, rng);

    const int n = static_cast<int>(shuffled.size());
    const int chunk = n / folds;
    const int remainder = n % folds;
    std::vector<FoldSplit> splits(static_cast<size_t>(folds));
    int pos = 0;
    for (int f = 0; f < folds; ++f) {
        const int size = chunk + (f < remainder ? 1 : 0);
        for (int i = 0; i < n; ++i) {
            if (i >= pos && i < pos + size)
                splits[static_cast<size_t>(f)].val_ids.push_back(shuffled[static_cast<size_t>(i)]);
            else
                splits[static_cast<size_t>(f)].train_ids.push_back(shuffled[static_cast<size_t>(i)]);
        }
        pos += size;
    }
    return splits;
}

namespace {

void append_slices(const Volume& volume, int case_index, std::vector<TrainSample>& out) {
    const int d = volume.depth();
    const size_t plane = static_cast<size_t>(volume.height()) * static_cast<size_t>(volume.width());
    for (int z = 0; z < d; ++z) {
        TrainSample sample;
        sample.case_index = case_index;
        const auto base = static_cast<std::vector<double>::difference_type>(volume.index(z, 0, 0));
        sample.image.assign(volume.data.begin() + base,
                            volume.data.begin() + base + static_cast<int64_t>(plane));
        sample.labels.assign(volume.labels.begin() + base,
                             volume.labels.begin() + base + static_cast<int64_t>(plane));
        out.push_back(std::move(sample));
    }
}

}  // namespace

FoldData build_fold_data(const std::vector<Volume>& cases, const std::vector<int>& train_cases,
                         const std::vector<int>& val_cases, int num_classes, bool offline_flips) {
    for (int t : train_cases)
        for (int v : val_cases)
            if (t == v)
                throw std::invalid_argument("build_fold_data: case " + std::to_string(t) +
                                            " appears in both train and validation sets");
    FoldData fold;
    fold.num_classes = num_classes;
    fold.train_case_indices = train_cases;
    fold.val_case_indices = val_cases;

    auto check_case = [&](int idx) -> const Volume& {
        const Volume& volume = cases.at(static_cast<size_t>(idx));
        if (!volume.has_labels())
            throw std::invalid_argument("build_fold_data: case " + std::to_string(idx) + " has no labels");
        for (uint8_t l : volume.labels)
            if (l >= num_classes)
                throw std::invalid_argument("build_fold_data: case " + std::to_string(idx) +
                                            " holds label " + std::to_string(l) + " out of range");
        if (fold.height == 0) {
            fold.height = volume.height();
            fold.width = volume.width();
        } else if (fold.height != volume.height() || fold.width != volume.width()) {
            throw std::invalid_argument("build_fold_data: case slice sizes differ");
        }
        return volume;
    };

    for (int idx : train_cases) {
        const Volume& volume = check_case(idx);
        append_slices(volume, idx, fold.train);
        if (offline_flips) {
            append_slices(flip_volume(volume, FlipAxis::horizontal), idx, fold.train);
            append_slices(flip_volume(volume, FlipAxis::vertical), idx, fold.train);
        }
    }
    for (int idx : val_cases) {
        const Volume& volume = check_case(idx);
        append_slices(volume, idx, fold.val);
    }
    return fold;
}

// ---------------------------------------------------------------------------
// batches and validation
// ---------------------------------------------------------------------------

namespace {

Tensor images_to_batch(const std::vector<const std::vector<double>*>& images, int h, int w) {
    const int b = static_cast<int>(images.size());
    Tensor batch = Tensor::zeros({b, 1, h, w});
    const size_t plane = static_cast<size_t>(h) * static_cast<size_t>(w);
    for (int i = 0; i < b; ++i)
        std::copy(images[static_cast<size_t>(i)]->begin(), images[static_cast<size_t>(i)]->end(),
                  batch.data() + static_cast<size_t>(i) * plane);
    return batch;
}

Tensor labels_to_onehot(const std::vector<const std::vector<uint8_t>*>& labels, int h, int w,
                        int num_classes) {
    const int b = static_cast<int>(labels.size());
    Tensor target = Tensor::zeros({b, num_classes, h, w});
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int i = 0; i < b; ++i) {
        const std::vector<uint8_t>& l = *labels[static_cast<size_t>(i)];
        double* base = target.data() + static_cast<int64_t>(i) * num_classes * plane;
        for (int64_t p = 0; p < plane; ++p) base[l[static_cast<size_t>(p)] * plane + p] = 1.0;
    }
    return target;
}

struct OverlapCounts {
    std::vector<int64_t> inter, gt, pred;
    explicit OverlapCounts(int num_classes)
        : inter(static_cast<size_t>(num_classes), 0),
          gt(static_cast<size_t>(num_classes), 0),
          pred(static_cast<size_t>(num_classes), 0) {}

    void accumulate(const std::vector<uint8_t>& gt_labels, const uint8_t* pred_labels) {
        for (size_t i = 0; i < gt_labels.size(); ++i) {
            const uint8_t g = gt_labels[i], p = pred_labels[i];
            ++gt[g];
            ++pred[p];
            if (g == p) ++inter[g];
        }
    }

    double mean_foreground_dsc() const {
        double total = 0.0;
        const int k = static_cast<int>(inter.size());
        for (int c = 1; c < k; ++c) {
            const int64_t denom = gt[static_cast<size_t>(c)] + pred[static_cast<size_t>(c)];
            total += denom == 0 ? 1.0
                                : 2.0 * static_cast<double>(inter[static_cast<size_t>(c)]) /
                                      static_cast<double>(denom);
        }
        return total / static_cast<double>(k - 1);
    }
};

}  // namespace

double validation_dsc(ModelState& model, const std::vector<TrainSample>& samples, int height,
                      int width, int num_classes, int batch_size) {
    if (samples.empty()) throw std::invalid_argument("validation_dsc: empty sample set");
    OverlapCounts counts(num_classes);
    const size_t plane = static_cast<size_t>(height) * static_cast<size_t>(width);
    for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
        std::vector<const std::vector<double>*> images;
        for (size_t i = start; i < end; ++i) images.push_back(&samples[i].image);
        const Tensor batch = images_to_batch(images, height, width);
        Tensor probs = forward(nullptr, model, batch, Mode::eval);
        const std::vector<uint8_t> pred = predict_labels(probs);
        for (size_t i = start; i < end; ++i)
            counts.accumulate(samples[i].labels, pred.data() + (i - start) * plane);
    }
    return counts.mean_foreground_dsc();
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

std::string format_epoch_log(const EpochLog& entry) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "epoch=%d stage=%d loss=%.12g val_dsc=%.12g lr=%.12g",
                  entry.epoch, entry.stage, entry.loss, entry.val_dsc, entry.lr);
    return buf;
}

namespace {

struct BestSnapshot {
    bool present = false;
    NamedTensors params;
    NamedTensors buffers;
    int epoch = -1;
    double val_dsc = -std::numeric_limits<double>::infinity();
};

struct StageRuntime {
    int stage = 1;
    int max_epochs = 0;
    bool early_stop = true;
    bool augment = false;
    LossKind loss_kind = LossKind::dice;
};

Checkpoint assemble_checkpoint(const ModelState& model, const AdamState& adam, const Rng& rng,
                               const StageRuntime& rt, int epoch, double lr, int plateau_count,
                               int stop_count, const BestSnapshot& best, bool embed_best) {
    Checkpoint c;
    c.model = model.config;
    c.loss_kind = rt.loss_kind;
    c.stage = rt.stage;
    c.epoch = epoch;
    c.step = adam.step;
    c.lr = lr;
    c.best_val_dsc = best.present ? best.val_dsc : -1.0;
    c.best_epoch = best.epoch;
    c.plateau_count = plateau_count;
    c.stop_count = stop_count;
    c.rng_state = rng.state();
    c.params = clone_tensors(model.params);
    c.buffers = buffers_from_state(model);
    c.adam_m = clone_tensors(adam.m);
    c.adam_v = clone_tensors(adam.v);
    if (embed_best && best.present) {
        c.has_best = true;
        c.best_params = clone_tensors(best.params);
        c.best_buffers = clone_tensors(best.buffers);
    }
    return c;
}

Checkpoint best_checkpoint_from(const ModelState& model, const Rng& rng, const AdamState& adam,
                                const StageRuntime& rt, double lr, int plateau_count, int stop_count,
                                const BestSnapshot& best) {
    Checkpoint c;
    c.model = model.config;
    c.loss_kind = rt.loss_kind;
    c.stage = rt.stage;
    c.epoch = best.epoch;
    c.step = adam.step;
    c.lr = lr;
    c.best_val_dsc = best.val_dsc;
    c.best_epoch = best.epoch;
    c.plateau_count = plateau_count;
    c.stop_count = stop_count;
    c.rng_state = rng.state();
    c.params = clone_tensors(best.params);
    c.buffers = clone_tensors(best.buffers);
    return c;
}

// Core epoch loop shared by both stages and by mid-run resumes. The whole
// train state (model, adam, rng, lr, counters, best snapshot) round-trips
// through Checkpoint, so a resumed run replays the remaining epochs
// bit-identically.
TrainResult run_training(ModelState& model, AdamState& adam, Rng& rng, const FoldData& fold,
                         const TrainConfig& config, const StageRuntime& rt, int start_epoch,
                         double lr, int plateau_count, int stop_count, BestSnapshot best) {
    if (fold.train.empty()) throw std::invalid_argument("train: empty training set");
    if (fold.val.empty()) throw std::invalid_argument("train: empty validation set");
    const int h = fold.height, w = fold.width;
    const int k = fold.num_classes;
    if (k != model.config.num_classes)
        throw std::invalid_argument("train: fold has " + std::to_string(k) +
                                    " classes, checkpoint model expects " +
                                    std::to_string(model.config.num_classes));

    LossConfig loss_config = config.loss;
    loss_config.kind = rt.loss_kind;

    TrainResult result;

    // Baseline: a loaded model counts as a best-candidate before any new
    // epoch, so fine-tuning can never return something worse than its input.
    if (!best.present && start_epoch == 0) {
        bool bn_ready = true;
        for (const auto& [name, bn] : model.bn_states) bn_ready = bn_ready && bn.initialized;
        if (bn_ready && !model.bn_states.empty()) {
            best.present = true;
            best.val_dsc = validation_dsc(model, fold.val, h, w, k, config.batch_size);
            best.epoch = -1;
            best.params = clone_tensors(model.params);
            best.buffers = buffers_from_state(model);
        }
    }

    std::vector<size_t> order(fold.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = start_epoch; epoch < rt.max_epochs; ++epoch) {
        shuffle(order, rng);

        double loss_sum = 0.0;
        size_t sample_count = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));

            std::vector<std::pair<std::vector<double>, std::vector<uint8_t>>> augmented;
            std::vector<const std::vector<double>*> images;
            std::vector<const std::vector<uint8_t>*> labels;
            if (rt.augment) {
                augmented.reserve(end - start);
                for (size_t i = start; i < end; ++i) {
                    const TrainSample& s = fold.train[order[i]];
                    const AugmentParams params = draw_augment_params(rng.next_u64(), config.augment);
                    augmented.push_back(random_augment(s.image, s.labels, h, w, params));
                }
                for (const auto& [img, lab] : augmented) {
                    images.push_back(&img);
                    labels.push_back(&lab);
                }
            } else {
                for (size_t i = start; i < end; ++i) {
                    images.push_back(&fold.train[order[i]].image);
                    labels.push_back(&fold.train[order[i]].labels);
                }
            }

            const Tensor batch = images_to_batch(images, h, w);
            const Tensor target = labels_to_onehot(labels, h, w, k);

            Tape tape;
            Tensor probs = forward(&tape, model, batch, Mode::train);
            Tensor loss = segmentation_loss(&tape, probs, target, loss_config);
            tape.backward(loss);
            adam_step(model.params, adam, lr, config.beta1, config.beta2, config.adam_eps);
            for (auto& [name, p] : model.params) p.zero_grad();

            loss_sum += loss.data()[0] * static_cast<double>(end - start);
            sample_count += end - start;
        }

        const double epoch_loss = loss_sum / static_cast<double>(sample_count);
        const double val = validation_dsc(model, fold.val, h, w, k, config.batch_size);
        result.log.push_back({rt.stage, epoch, epoch_loss, val, lr});
        if (config.on_epoch) config.on_epoch(result.log.back());

        if (!best.present || val > best.val_dsc) {
            best.present = true;
            best.val_dsc = val;
            best.epoch = epoch;
            best.params = clone_tensors(model.params);
            best.buffers = buffers_from_state(model);
            plateau_count = 0;
            stop_count = 0;
        } else {
            ++plateau_count;
            ++stop_count;
            if (plateau_count >= config.plateau_patience) {
                lr *= config.decay_factor;
                plateau_count = 0;
            }
        }

        const bool reached_target = config.stop_at_val_dsc > 0.0 && val >= config.stop_at_val_dsc;
        const bool stop_early = rt.early_stop && stop_count >= config.early_stop_patience;
        const bool last_epoch = epoch == rt.max_epochs - 1 || reached_target || stop_early;
        if (last_epoch) {
            result.last = assemble_checkpoint(model, adam, rng, rt, epoch, lr, plateau_count,
                                              stop_count, best, true);
            break;
        }
    }

    if (result.log.empty()) {
        // zero remaining epochs: emit the current state unchanged
        result.last = assemble_checkpoint(model, adam, rng, rt, start_epoch - 1, lr, plateau_count,
                                          stop_count, best, true);
    }
    result.best = best_checkpoint_from(model, rng, adam, rt, lr, plateau_count, stop_count, best);
    return result;
}

AdamState adam_from_checkpoint(const Checkpoint& c) {
    AdamState adam;
    adam.m = clone_tensors(c.adam_m);
    adam.v = clone_tensors(c.adam_v);
    adam.step = c.step;
    return adam;
}

BestSnapshot best_from_checkpoint(const Checkpoint& c) {
    BestSnapshot best;
    if (c.has_best) {
        best.present = true;
        best.params = clone_tensors(c.best_params);
        best.buffers = clone_tensors(c.best_buffers);
        best.epoch = c.best_epoch;
        best.val_dsc = c.best_val_dsc;
    }
    return best;
}

}  // namespace

TrainResult train_stage1(const FoldData& fold, const ModelConfig& model_config,
                         const TrainConfig& config) {
    config.validate();
    ModelState model = build_model(model_config);
    AdamState adam;
    Rng rng = Rng::substream(config.seed, 1);
    StageRuntime rt;
    rt.stage = 1;
    rt.max_epochs = config.stage1_max_epochs;
    rt.early_stop = true;
    rt.augment = false;
    rt.loss_kind = config.loss.kind;
    return run_training(model, adam, rng, fold, config, rt, 0, config.lr, 0, 0, BestSnapshot{});
}

TrainResult resume_stage1(const Checkpoint& start, const FoldData& fold, const TrainConfig& config) {
    config.validate();
    if (start.stage != 1)
        throw std::invalid_argument("resume_stage1: checkpoint is for stage " +
                                    std::to_string(start.stage));
    ModelState model = model_from_checkpoint(start);
    AdamState adam = adam_from_checkpoint(start);
    Rng rng;
    rng.set_state(start.rng_state);
    StageRuntime rt;
    rt.stage = 1;
    rt.max_epochs = config.stage1_max_epochs;
    rt.early_stop = true;
    rt.augment = false;
    rt.loss_kind = start.loss_kind;
    return run_training(model, adam, rng, fold, config, rt, start.epoch + 1, start.lr,
                        start.plateau_count, start.stop_count, best_from_checkpoint(start));
}

TrainResult train_stage2(const Checkpoint& start, const FoldData& fold, const TrainConfig& config) {
    config.validate();
    StageRuntime rt;
    rt.stage = 2;
    rt.max_epochs = config.stage2_epochs;
    rt.early_stop = false;  // the fine-tuning stage runs its full epoch budget
    rt.augment = true;

    if (start.stage == 2) {
        // mid-run resume: restore everything, keep the checkpoint's loss
        ModelState model = model_from_checkpoint(start);
        AdamState adam = adam_from_checkpoint(start);
        Rng rng;
        rng.set_state(start.rng_state);
        rt.loss_kind = start.loss_kind;
        return run_training(model, adam, rng, fold, config, rt, start.epoch + 1, start.lr,
                            start.plateau_count, start.stop_count, best_from_checkpoint(start));
    }

    // fresh stage 2 from stage-1 weights: new optimizer, new schedule
    ModelState model = model_from_checkpoint(start);
    AdamState adam;
    Rng rng = Rng::substream(config.seed, 2);
    rt.loss_kind = config.loss.kind;
    return run_training(model, adam, rng, fold, config, rt, 0, config.lr, 0, 0, BestSnapshot{});
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

std::vector<uint8_t> predict_volume(ModelState& model, const Volume& preprocessed, int batch_size,
                                    bool postprocess) {
    const int d = preprocessed.depth(), h = preprocessed.height(), w = preprocessed.width();
    const int divisor = model.config.spatial_divisor();
    if (h % divisor != 0 || w % divisor != 0)
        throw std::invalid_argument("predict_volume: slice dims " + std::to_string(h) + "x" +
                                    std::to_string(w) + " must be divisible by " +
                                    std::to_string(divisor));
    const size_t plane = static_cast<size_t>(h) * static_cast<size_t>(w);
    std::vector<uint8_t> labels(static_cast<size_t>(d) * plane);

    std::vector<std::vector<double>> slices(static_cast<size_t>(d));
    for (int z = 0; z < d; ++z) {
        const auto base = static_cast<std::vector<double>::difference_type>(preprocessed.index(z, 0, 0));
        slices[static_cast<size_t>(z)].assign(preprocessed.data.begin() + base,
                                              preprocessed.data.begin() + base + static_cast<int64_t>(plane));
    }
    for (int start = 0; start < d; start += batch_size) {
        const int end = std::min(d, start + batch_size);
        std::vector<const std::vector<double>*> images;
        for (int z = start; z < end; ++z) images.push_back(&slices[static_cast<size_t>(z)]);
        const Tensor batch = images_to_batch(images, h, w);
        Tensor probs = forward(nullptr, model, batch, Mode::eval);
        const std::vector<uint8_t> pred = predict_labels(probs);
        std::copy(pred.begin(), pred.end(), labels.begin() + static_cast<int64_t>(start) * static_cast<int64_t>(plane));
    }

    if (postprocess)
        labels = largest_component_filter(labels, {d, h, w}, model.config.num_classes);
    return labels;
}

}  // namespace oarseg
