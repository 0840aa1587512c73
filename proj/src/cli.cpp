#include "oarseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include "oarseg/metrics.hpp"
#include "oarseg/nifti.hpp"
#include "oarseg/phantom.hpp"
#include "oarseg/postprocess.hpp"
#include "oarseg/preprocess.hpp"
#include "oarseg/trainer.hpp"

namespace fs = std::filesystem;

namespace oarseg {

namespace {

std::array<int, 3> parse_dims(const std::string& text) {
    std::array<int, 3> dims{};
    char sep1, sep2;
    std::istringstream is(text);
    if (!(is >> dims[0] >> sep1 >> dims[1] >> sep2 >> dims[2]) || sep1 != 'x' || sep2 != 'x')
        throw CLI::ValidationError("--dims", "expected DxHxW, e.g. 32x96x96");
    return dims;
}

std::array<double, 3> parse_spacing(const std::string& text) {
    std::array<double, 3> s{};
    char sep1, sep2;
    std::istringstream is(text);
    if (!(is >> s[0] >> sep1 >> s[1] >> sep2 >> s[2]) || sep1 != 'x' || sep2 != 'x')
        throw CLI::ValidationError("--spacing", "expected SXxSYxSZ, e.g. 0.98x0.98x2.5");
    return s;
}

struct PreprocessFlags {
    double window_lo = -1000.0;
    double window_hi = 1000.0;
    int clahe_tiles = 8;
    double clahe_clip = 2.0;
    int crop = 288;

    void attach(CLI::App* cmd) {
        cmd->add_option("--window-lo", window_lo, "Lower intensity window bound (HU)");
        cmd->add_option("--window-hi", window_hi, "Upper intensity window bound (HU)");
        cmd->add_option("--clahe-tiles", clahe_tiles, "CLAHE tile grid size per axis")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--clahe-clip", clahe_clip, "CLAHE clip limit (x uniform bin height)");
        cmd->add_option("--crop", crop, "Center-crop size for both in-plane axes")
            ->check(CLI::PositiveNumber);
    }

    PreprocessConfig config() const {
        PreprocessConfig c;
        c.window_lo = window_lo;
        c.window_hi = window_hi;
        c.clahe_tiles_y = clahe_tiles;
        c.clahe_tiles_x = clahe_tiles;
        c.clahe_clip = clahe_clip;
        c.crop_h = crop;
        c.crop_w = crop;
        return c;
    }
};

std::vector<std::string> list_case_dirs(const std::string& data_dir) {
    std::vector<std::string> ids;
    if (!fs::is_directory(data_dir))
        throw std::runtime_error("data directory '" + data_dir + "' does not exist");
    for (const auto& entry : fs::directory_iterator(data_dir))
        if (entry.is_directory() && fs::exists(entry.path() / "image.nii"))
            ids.push_back(entry.path().filename().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty())
        throw std::runtime_error("no case directories with image.nii found under '" + data_dir + "'");
    return ids;
}

int cmd_phantom(int cases, const std::string& out_dir, uint64_t seed, const std::string& dims_text,
                const std::string& spacing_text, double noise) {
    PhantomSpec spec;
    spec.dims = parse_dims(dims_text);
    spec.spacing = parse_spacing(spacing_text);
    spec.noise_std = noise;
    const std::vector<std::string> case_dirs = generate_dataset(cases, spec, seed, out_dir);
    for (const std::string& name : case_dirs) {
        const Volume volume = read_case((fs::path(out_dir) / name).string(), kNumClasses);
        std::array<int64_t, kNumClasses> counts{};
        for (uint8_t l : volume.labels) ++counts[l];
        std::cout << name << ": " << volume.depth() << "x" << volume.height() << "x"
                  << volume.width() << " voxels";
        for (int c = 1; c < kNumClasses; ++c)
            std::cout << " " << class_name(c, kNumClasses) << "=" << counts[static_cast<size_t>(c)];
        std::cout << "\n";
    }
    return 0;
}

struct FoldJob {
    int fold = 0;
    FoldSplit split;
};

int cmd_train(const std::string& data_dir, const std::string& out_dir, int stage, int fold_arg,
              int folds, std::string loss_name, const std::string& resume_path, int epochs,
              uint64_t seed, int batch_size, double lr, int jobs, const PreprocessFlags& pp,
              int depth, int base_channels, int classes) {
    if (stage == 2 && resume_path.empty())
        throw CLI::RequiredError("--resume (stage 2 fine-tunes a stage-1 checkpoint)");
    if (loss_name.empty()) loss_name = stage == 1 ? "dice" : "tversky";

    const std::vector<std::string> ids = list_case_dirs(data_dir);
    const std::vector<FoldSplit> splits = five_fold_split(ids, folds, seed);

    std::map<std::string, int> id_index;
    for (size_t i = 0; i < ids.size(); ++i) id_index[ids[i]] = static_cast<int>(i);

    std::cerr << "loading " << ids.size() << " cases from " << data_dir << "\n";
    const PreprocessConfig pp_config = pp.config();
    std::vector<Volume> cases;
    cases.reserve(ids.size());
    for (const std::string& id : ids) {
        const Volume raw = read_case((fs::path(data_dir) / id).string(), classes);
        if (!raw.has_labels())
            throw std::runtime_error("case '" + id + "' has no labels.nii; cannot train");
        cases.push_back(preprocess_volume(raw, pp_config));
    }

    std::vector<FoldJob> jobs_list;
    if (fold_arg < 0) {
        for (int f = 0; f < folds; ++f) jobs_list.push_back({f, splits[static_cast<size_t>(f)]});
    } else {
        if (fold_arg >= folds)
            throw std::runtime_error("--fold " + std::to_string(fold_arg) + " out of range [0," +
                                     std::to_string(folds) + ")");
        jobs_list.push_back({fold_arg, splits[static_cast<size_t>(fold_arg)]});
    }

    std::mutex io_mutex;
    std::vector<std::string> failures;

    auto run_fold = [&](const FoldJob& job) {
        try {
            std::vector<int> train_idx, val_idx;
            for (const std::string& id : job.split.train_ids) train_idx.push_back(id_index.at(id));
            for (const std::string& id : job.split.val_ids) val_idx.push_back(id_index.at(id));
            const FoldData fold = build_fold_data(cases, train_idx, val_idx, classes, true);

            const fs::path fold_dir = fs::path(out_dir) / ("fold_" + std::to_string(job.fold));
            fs::create_directories(fold_dir);
            const std::string stage_tag = "stage" + std::to_string(stage);
            std::ofstream log_file(fold_dir / (stage_tag + "_log.txt"), std::ios::trunc);
            if (!log_file)
                throw std::runtime_error("cannot write logs under '" + fold_dir.string() + "'");

            TrainConfig config;
            config.seed = seed;
            config.lr = lr;
            config.batch_size = batch_size;
            config.folds = folds;
            config.loss.kind = loss_kind_from_name(loss_name);
            if (epochs > 0) {
                config.stage1_max_epochs = epochs;
                config.stage2_epochs = epochs;
            }
            config.on_epoch = [&](const EpochLog& entry) {
                const std::string line = format_epoch_log(entry);
                log_file << line << "\n";
                log_file.flush();
                std::lock_guard<std::mutex> lock(io_mutex);
                std::cerr << "[fold " << job.fold << "] " << line << "\n";
            };

            TrainResult result;
            if (stage == 1) {
                if (!resume_path.empty()) {
                    result = resume_stage1(load_checkpoint(resume_path), fold, config);
                } else {
                    ModelConfig mc;
                    mc.depth = depth;
                    mc.base_channels = base_channels;
                    mc.num_classes = classes;
                    mc.seed = seed + 7919ULL * static_cast<uint64_t>(job.fold) + 1ULL;
                    result = train_stage1(fold, mc, config);
                }
            } else {
                result = train_stage2(load_checkpoint(resume_path), fold, config);
            }

            save_checkpoint(result.best, (fold_dir / (stage_tag + "_best.ckpt")).string());
            save_checkpoint(result.last, (fold_dir / (stage_tag + "_last.ckpt")).string());
            {
                std::lock_guard<std::mutex> lock(io_mutex);
                std::cerr << "[fold " << job.fold << "] " << stage_tag
                          << " done: best val_dsc=" << result.best.best_val_dsc << " (epoch "
                          << result.best.best_epoch << ")\n";
            }
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(io_mutex);
            failures.push_back("fold " + std::to_string(job.fold) + ": " + e.what());
        }
    };

    if (jobs <= 1 || jobs_list.size() == 1) {
        for (const FoldJob& job : jobs_list) run_fold(job);
    } else {
        std::vector<std::thread> workers;
        std::mutex queue_mutex;
        size_t next = 0;
        const int worker_count = std::min<int>(jobs, static_cast<int>(jobs_list.size()));
        for (int t = 0; t < worker_count; ++t) {
            workers.emplace_back([&]() {
                while (true) {
                    size_t mine;
                    {
                        std::lock_guard<std::mutex> lock(queue_mutex);
                        if (next >= jobs_list.size()) return;
                        mine = next++;
                    }
                    run_fold(jobs_list[mine]);
                }
            });
        }
        for (std::thread& worker : workers) worker.join();
    }

    for (const std::string& failure : failures) std::cerr << "error: " << failure << "\n";
    return failures.empty() ? 0 : 1;
}

int cmd_predict(const std::string& ckpt_path, const std::string& in_path, const std::string& out_path,
                bool no_postprocess, int batch_size, const PreprocessFlags& pp) {
    const Checkpoint checkpoint = load_checkpoint(ckpt_path);
    ModelState model = model_from_checkpoint(checkpoint);
    const Volume raw = read_volume(in_path);
    const Volume preprocessed = preprocess_volume(raw, pp.config());
    const std::vector<uint8_t> labels = predict_volume(model, preprocessed, batch_size, !no_postprocess);

    Volume out;
    out.dims = preprocessed.dims;
    out.spacing = preprocessed.spacing;
    out.data.assign(labels.begin(), labels.end());
    out.labels = labels;
    write_label_volume(out, out_path);
    std::cerr << "wrote " << out_path << "\n";
    return 0;
}

int cmd_evaluate(const std::string& gt_path, const std::string& pred_path,
                 const std::string& report_path, int classes) {
    const Volume gt = read_label_volume(gt_path, classes);
    const Volume pred = read_label_volume(pred_path, classes);
    if (gt.dims != pred.dims)
        throw std::runtime_error("evaluate: volume shapes differ (" + std::to_string(gt.depth()) +
                                 "x" + std::to_string(gt.height()) + "x" + std::to_string(gt.width()) +
                                 " vs " + std::to_string(pred.depth()) + "x" +
                                 std::to_string(pred.height()) + "x" + std::to_string(pred.width()) + ")");
    const MetricsReport report = evaluate_volume(gt.labels, pred.labels, gt.dims, gt.spacing, classes);
    std::cout << format_report_table(report);
    if (!report_path.empty()) {
        std::ofstream out(report_path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write report to '" + report_path + "'");
        out << serialize_report(report);
    }
    return 0;
}

int cmd_summary(int depth, int base_channels, int classes, int in_channels,
                const std::string& rates_text, const std::string& residual, uint64_t seed,
                const std::string& input_text) {
    ModelConfig config;
    config.depth = depth;
    config.base_channels = base_channels;
    config.num_classes = classes;
    config.in_channels = in_channels;
    config.seed = seed;
    config.residual_mode = residual == "concat" ? ResidualMode::concat : ResidualMode::add;
    config.dilation_rates.clear();
    std::istringstream is(rates_text);
    std::string token;
    while (std::getline(is, token, ','))
        if (!token.empty()) config.dilation_rates.push_back(std::stoi(token));

    int h, w;
    char sep;
    std::istringstream dims(input_text);
    if (!(dims >> h >> sep >> w) || sep != 'x')
        throw CLI::ValidationError("--input", "expected HxW, e.g. 96x96");
    std::cout << model_summary(config, h, w);
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    tune_allocator();
    CLI::App app{"oarseg: from-scratch CNN engine and pipeline for multi-organ segmentation of CT volumes"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file (flags override file values)");

    // phantom
    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom dataset");
    int ph_cases = 0;
    std::string ph_out, ph_dims = "32x96x96", ph_spacing = "0.98x0.98x2.5";
    uint64_t ph_seed = 0;
    double ph_noise = 8.0;
    phantom->add_option("--cases", ph_cases, "Number of cases")->required()->check(CLI::PositiveNumber);
    phantom->add_option("--out", ph_out, "Output dataset directory")->required();
    phantom->add_option("--seed", ph_seed, "Base seed (case i uses seed+i)");
    phantom->add_option("--dims", ph_dims, "Volume dims DxHxW");
    phantom->add_option("--spacing", ph_spacing, "Voxel spacing SXxSYxSZ in mm");
    phantom->add_option("--noise", ph_noise, "Gaussian image noise stddev (HU)");

    // train
    auto* train = app.add_subcommand("train", "Train on a case directory");
    std::string tr_data, tr_out, tr_loss, tr_resume;
    int tr_stage = 1, tr_fold = 0, tr_folds = 5, tr_epochs = 0, tr_batch = 4, tr_jobs = 1;
    int tr_depth = 4, tr_base = 8, tr_classes = 5;
    uint64_t tr_seed = 0;
    double tr_lr = 1e-4;
    PreprocessFlags tr_pp;
    train->add_option("--data", tr_data, "Dataset directory of case subdirectories")->required();
    train->add_option("--out", tr_out, "Output directory for checkpoints and logs")->required();
    train->add_option("--stage", tr_stage, "Training stage")->required()->check(CLI::Range(1, 2));
    train->add_option("--fold", tr_fold, "Fold index, or -1 for all folds");
    train->add_option("--folds", tr_folds, "Number of cross-validation folds")->check(CLI::Range(2, 100));
    train->add_option("--loss", tr_loss, "Loss: dice or tversky (default: dice for stage 1, tversky for stage 2)")
        ->check(CLI::IsMember({"dice", "tversky"}));
    train->add_option("--resume", tr_resume, "Checkpoint to resume from (required for stage 2)");
    train->add_option("--epochs", tr_epochs, "Epoch budget for the chosen stage");
    train->add_option("--seed", tr_seed, "Training seed");
    train->add_option("--batch-size", tr_batch, "Mini-batch size")->check(CLI::PositiveNumber);
    train->add_option("--lr", tr_lr, "Initial learning rate");
    train->add_option("--jobs", tr_jobs, "Parallel fold workers")->check(CLI::PositiveNumber);
    train->add_option("--depth", tr_depth, "Encoder/decoder depth")->check(CLI::PositiveNumber);
    train->add_option("--base-channels", tr_base, "Channels of the first encoder block")
        ->check(CLI::PositiveNumber);
    train->add_option("--classes", tr_classes, "Number of classes including background")
        ->check(CLI::Range(2, 255));
    tr_pp.attach(train);

    // predict
    auto* predict = app.add_subcommand("predict", "Segment a volume with a trained checkpoint");
    std::string pr_ckpt, pr_in, pr_out;
    bool pr_no_post = false;
    int pr_batch = 4;
    PreprocessFlags pr_pp;
    predict->add_option("--ckpt", pr_ckpt, "Checkpoint file")->required();
    predict->add_option("--in", pr_in, "Input image volume (.nii)")->required();
    predict->add_option("--out", pr_out, "Output label volume (.nii)")->required();
    predict->add_flag("--no-postprocess", pr_no_post, "Skip largest-component filtering");
    predict->add_option("--batch-size", pr_batch, "Slices per forward batch")->check(CLI::PositiveNumber);
    pr_pp.attach(predict);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Compare a predicted label volume with ground truth");
    std::string ev_gt, ev_pred, ev_report;
    int ev_classes = 5;
    evaluate->add_option("--gt", ev_gt, "Ground-truth label volume (.nii)")->required();
    evaluate->add_option("--pred", ev_pred, "Predicted label volume (.nii)")->required();
    evaluate->add_option("--report", ev_report, "Write a key=value report file");
    evaluate->add_option("--classes", ev_classes, "Number of classes including background")
        ->check(CLI::Range(2, 255));

    // summary
    auto* summary = app.add_subcommand("summary", "Print the layer table of a model configuration");
    int sm_depth = 4, sm_base = 8, sm_classes = 5, sm_in = 1;
    std::string sm_rates = "1,2,3,4", sm_residual = "add", sm_input = "96x96";
    uint64_t sm_seed = 0;
    summary->add_option("--depth", sm_depth)->check(CLI::PositiveNumber);
    summary->add_option("--base-channels", sm_base)->check(CLI::PositiveNumber);
    summary->add_option("--classes", sm_classes)->check(CLI::Range(2, 255));
    summary->add_option("--in-channels", sm_in)->check(CLI::PositiveNumber);
    summary->add_option("--rates", sm_rates, "Bottleneck dilation rates, comma-separated");
    summary->add_option("--residual", sm_residual)->check(CLI::IsMember({"add", "concat"}));
    summary->add_option("--seed", sm_seed);
    summary->add_option("--input", sm_input, "Nominal input size HxW");

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (phantom->parsed())
            return cmd_phantom(ph_cases, ph_out, ph_seed, ph_dims, ph_spacing, ph_noise);
        if (train->parsed())
            return cmd_train(tr_data, tr_out, tr_stage, tr_fold, tr_folds, tr_loss, tr_resume,
                             tr_epochs, tr_seed, tr_batch, tr_lr, tr_jobs, tr_pp, tr_depth, tr_base,
                             tr_classes);
        if (predict->parsed())
            return cmd_predict(pr_ckpt, pr_in, pr_out, pr_no_post, pr_batch, pr_pp);
        if (evaluate->parsed()) return cmd_evaluate(ev_gt, ev_pred, ev_report, ev_classes);
        if (summary->parsed())
            return cmd_summary(sm_depth, sm_base, sm_classes, sm_in, sm_rates, sm_residual, sm_seed,
                               sm_input);
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace oarseg
