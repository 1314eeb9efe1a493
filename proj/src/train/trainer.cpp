#include "mass/core/error.hpp"
#include "mass/core/rng.hpp"
#include "mass/train/train.hpp"

#include <ATen/autocast_mode.h>
#include "mass/core/log.hpp"

#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

namespace mass::train {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (!(base_lr > 0)) throw ConfigError("train.base_lr must be > 0");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (steps_per_epoch < 0 || max_steps < 0) throw ConfigError("train step counts must be >= 0");
    if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(poly_power > 0)) throw ConfigError("train.poly_power must be > 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    if (workers < 0) throw ConfigError("train.workers must be >= 0");
    if (queue_capacity < 1) throw ConfigError("train.queue_capacity must be >= 1");
    if (mixed_precision && double_precision) throw ConfigError("mixed_precision and double_precision are exclusive");
    model.validate();
    augment.validate();
    model.check_crop(augment.crop);
}

int TrainConfig::resolved_total_steps(size_t n_volumes) const {
    if (max_steps > 0) return max_steps;
    int const per = steps_per_epoch > 0
                        ? steps_per_epoch
                        : std::max(1, static_cast<int>((n_volumes + static_cast<size_t>(batch_size) - 1) /
                                                       static_cast<size_t>(batch_size)));
    return epochs * per;
}

void to_json(json& j, TrainConfig const& c) {
    j = json{{"epochs", c.epochs},
             {"steps_per_epoch", c.steps_per_epoch},
             {"max_steps", c.max_steps},
             {"base_lr", c.base_lr},
             {"weight_decay", c.weight_decay},
             {"poly_power", c.poly_power},
             {"batch_size", c.batch_size},
             {"optimizer", c.optimizer == OptimizerKind::LAMB ? "LAMB" : "ADAMW"},
             {"seed", c.seed},
             {"checkpoint_every", c.checkpoint_every},
             {"workers", c.workers},
             {"queue_capacity", c.queue_capacity},
             {"mixed_precision", c.mixed_precision},
             {"double_precision", c.double_precision},
             {"model", c.model},
             {"augment", c.augment}};
}

void from_json(json const& j, TrainConfig& c) {
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    static std::vector<std::string> const known{
        "epochs",  "steps_per_epoch", "max_steps",      "base_lr",         "weight_decay",     "poly_power",
        "batch_size", "optimizer",    "seed",           "checkpoint_every", "workers",         "queue_capacity",
        "mixed_precision", "double_precision", "model", "augment"};
    for (auto const& [k, _] : j.items()) {
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ConfigError("unknown key '" + k + "' in training config");
    }
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.base_lr = j.value("base_lr", c.base_lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.poly_power = j.value("poly_power", c.poly_power);
        c.batch_size = j.value("batch_size", c.batch_size);
        if (j.contains("optimizer")) {
            std::string const o = j["optimizer"].get<std::string>();
            if (o == "LAMB") c.optimizer = OptimizerKind::LAMB;
            else if (o == "ADAMW") c.optimizer = OptimizerKind::ADAMW;
            else throw ConfigError("optimizer must be LAMB or ADAMW, got '" + o + "'");
        }
        c.seed = j.value("seed", c.seed);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.workers = j.value("workers", c.workers);
        c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
        c.mixed_precision = j.value("mixed_precision", c.mixed_precision);
        c.double_precision = j.value("double_precision", c.double_precision);
        if (j.contains("model")) c.model = j["model"].get<model::ModelConfig>();
        if (j.contains("augment")) c.augment = j["augment"].get<augment::AugmentConfig>();
    } catch (json::exception const& e) {
        throw ConfigError(std::string("bad training config: ") + e.what());
    }
    c.validate();
}

TrainState TrainState::create(TrainConfig const& cfg, int64_t total_steps) {
    cfg.validate();
    TrainState s;
    s.cfg = cfg;
    s.total_steps = total_steps;
    s.net = model::make_model(cfg.model, derive_seed(cfg.seed, "init"));
    s.net->to(s.dtype());
    s.net->train();
    s.opt = std::make_unique<Optimizer>(cfg.optimizer, s.net->parameters(), cfg.weight_decay);
    return s;
}

namespace {

torch::Tensor to_tensor(Array3D<float> const& a, torch::Dtype dtype) {
    Shape3 const& s = a.shape();
    return torch::from_blob(const_cast<float*>(a.storage().data()), {1, 1, s[0], s[1], s[2]}, torch::kFloat)
        .to(dtype, false, true);
}

torch::Tensor to_tensor(BinaryArray const& a, torch::Dtype dtype) {
    Shape3 const& s = a.shape();
    return torch::from_blob(const_cast<uint8_t*>(a.storage().data()), {1, 1, s[0], s[1], s[2]}, torch::kUInt8)
        .to(dtype, false, true);
}

std::string describe(std::vector<augment::EpisodeProvenance> const& prov) {
    std::string out;
    for (auto const& p : prov) {
        out += " [volume " + p.volume_id + " mask " + std::to_string(p.mask_index) + " attempts " +
               std::to_string(p.attempts) + " start_s " + format_shape(p.s.start) + " start_q " +
               format_shape(p.q.start) + " scale_s " + std::to_string(p.s.params.scale) + " scale_q " +
               std::to_string(p.q.params.scale) + "]";
    }
    return out;
}

struct AutocastGuard {
    bool on;
    explicit AutocastGuard(bool enable) : on(enable) {
        if (on) {
            at::autocast::set_autocast_dtype(at::kCPU, at::kBFloat16);
            at::autocast::set_autocast_enabled(at::kCPU, true);
        }
    }
    ~AutocastGuard() {
        if (on) {
            at::autocast::set_autocast_enabled(at::kCPU, false);
            at::autocast::clear_cache();
        }
    }
};

} // namespace

EpisodeBatch stack_episodes(std::vector<augment::Episode> const& eps, torch::Dtype dtype) {
    if (eps.empty()) throw PreconditionError("empty episode batch");
    std::vector<torch::Tensor> xs, ys, xq, yq;
    EpisodeBatch b;
    for (auto const& e : eps) {
        xs.push_back(to_tensor(e.x_s, dtype));
        ys.push_back(to_tensor(e.y_s, dtype));
        xq.push_back(to_tensor(e.x_q, dtype));
        yq.push_back(to_tensor(e.y_q, dtype));
        b.provenance.push_back(e.provenance);
    }
    b.x_s = torch::cat(xs);
    b.y_s = torch::cat(ys);
    b.x_q = torch::cat(xq);
    b.y_q = torch::cat(yq);
    return b;
}

LossRecord train_step(TrainState& state, EpisodeBatch const& batch) {
    double const lr = poly_lr(state.step, state.total_steps, state.cfg.base_lr, state.cfg.poly_power);
    state.net->train();
    state.opt->zero_grad();
    SegLoss loss;
    {
        AutocastGuard ac(state.cfg.mixed_precision);
        torch::Tensor const logits = state.net->forward(batch.x_s, batch.y_s, batch.x_q);
        loss = seg_loss(logits.to(state.dtype()), batch.y_q);
    }
    double const total = loss.total.item<double>();
    if (!std::isfinite(total)) {
        std::string const msg = "non-finite loss at step " + std::to_string(state.step) + ";" + describe(batch.provenance);
        log::error(msg);
        throw NonFiniteLoss(msg);
    }
    loss.total.backward();
    state.opt->step(lr);
    LossRecord r{state.step, lr, loss.dice.item<double>(), loss.bce.item<double>(), total};
    state.history.push_back(r);
    ++state.step;
    return r;
}

EpisodeSampler::EpisodeSampler(std::vector<CorpusEntry> const& corpus, TrainConfig const& cfg) : cfg_(cfg) {
    for (size_t v = 0; v < corpus.size(); ++v) {
        CorpusEntry const& e = corpus[v];
        if (e.bank.empty()) throw PreconditionError("mask bank of volume '" + e.volume.id + "' is empty");
        if (e.bank.shape != e.volume.shape())
            throw ShapeError("mask bank of volume '" + e.volume.id + "' does not match the volume shape");
        Source src;
        src.vol = augment::prepare_volume(e.volume);
        for (size_t m = 0; m < e.bank.masks.size(); ++m) {
            BinaryArray const& mk = e.bank.masks[m].voxels;
            Rng probe(cfg.seed, "feasibility", {v, m});
            try {
                (void)augment::make_episode(src.vol, mk, probe, cfg.augment, static_cast<int64_t>(m));
            } catch (EpisodeRejected const&) {
                continue;
            }
            src.masks.push_back(&mk);
            src.mask_index.push_back(static_cast<int64_t>(m));
        }
        if (src.masks.empty()) {
            log::warn("quarantined volume '" + e.volume.id + "': every mask yields rejected episodes");
            quarantined_.push_back(e.volume.id);
            continue;
        }
        active_.push_back(std::move(src));
    }
    if (active_.empty()) throw PreconditionError("no volume in the corpus yields valid episodes");
}

std::vector<augment::Episode> EpisodeSampler::batch(int64_t step) const {
    std::vector<augment::Episode> out;
    for (int slot = 0; slot < cfg_.batch_size; ++slot) {
        Rng rng(cfg_.seed, "episode", {static_cast<uint64_t>(step), static_cast<uint64_t>(slot)});
        for (int tries = 0;; ++tries) {
            Source const& src = active_[static_cast<size_t>(rng.uniform_int(active_.size()))];
            size_t const m = static_cast<size_t>(rng.uniform_int(src.masks.size()));
            try {
                out.push_back(augment::make_episode(src.vol, *src.masks[m], rng, cfg_.augment, src.mask_index[m]));
                break;
            } catch (EpisodeRejected const&) {
                if (tries >= 100) throw;
            }
        }
    }
    return out;
}

void write_history_csv(std::vector<LossRecord> const& h, fs::path const& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path.string());
    f << "step,lr,dice,bce,total\n";
    char buf[256];
    for (auto const& r : h) {
        std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(r.step), r.lr, r.dice,
                      r.bce, r.total);
        f << buf;
    }
}

namespace {

/// Workers build batches for claimed steps; the consumer takes them in order.
class Loader {
  public:
    Loader(EpisodeSampler const& sampler, int workers, int capacity, int64_t first, int64_t end)
        : sampler_(sampler), capacity_(capacity), next_(first), consumed_(first), end_(end) {
        for (int w = 0; w < workers; ++w) threads_.emplace_back([this] { run(); });
    }
    ~Loader() {
        {
            std::lock_guard lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    std::vector<augment::Episode> take(int64_t step) {
        if (threads_.empty()) return sampler_.batch(step);
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return ready_.contains(step) || error_; });
        if (error_) std::rethrow_exception(error_);
        auto b = std::move(ready_[step]);
        ready_.erase(step);
        consumed_ = step + 1;
        cv_.notify_all();
        return b;
    }

  private:
    void run() {
        for (;;) {
            int64_t s;
            {
                std::unique_lock lk(mu_);
                cv_.wait(lk, [&] { return stop_ || next_ >= end_ || next_ < consumed_ + capacity_; });
                if (stop_ || next_ >= end_) return;
                s = next_++;
            }
            try {
                auto b = sampler_.batch(s);
                std::lock_guard lk(mu_);
                ready_[s] = std::move(b);
            } catch (...) {
                std::lock_guard lk(mu_);
                error_ = std::current_exception();
            }
            cv_.notify_all();
        }
    }

    EpisodeSampler const& sampler_;
    int64_t capacity_;
    int64_t next_, consumed_, end_;
    bool stop_ = false;
    std::exception_ptr error_;
    std::map<int64_t, std::vector<augment::Episode>> ready_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::vector<std::thread> threads_;
};

} // namespace

RunResult run_pretraining(std::vector<CorpusEntry> const& corpus, TrainConfig const& cfg, RunOptions const& opts) {
    cfg.validate();
    if (corpus.empty()) throw PreconditionError("pretraining corpus is empty");
    EpisodeSampler const sampler(corpus, cfg);
    RunResult res;
    res.quarantined = sampler.quarantined();
    if (!opts.resume_from.empty()) {
        res.state = load_checkpoint(opts.resume_from, &cfg.model);
        res.state.cfg.workers = cfg.workers;
        res.state.cfg.queue_capacity = cfg.queue_capacity;
        res.state.cfg.checkpoint_every = cfg.checkpoint_every;
        log::info("resumed from " + opts.resume_from.string() + " at step " + std::to_string(res.state.step));
    } else {
        res.state = TrainState::create(cfg, cfg.resolved_total_steps(corpus.size()));
    }
    TrainState& st = res.state;
    if (!opts.out_dir.empty()) {
        fs::create_directories(opts.out_dir / "checkpoints");
        std::ofstream(opts.out_dir / "resolved-config.json") << json(st.cfg).dump(2) << '\n';
    }
    int64_t const end = opts.stop_after >= 0 ? std::min<int64_t>(opts.stop_after, st.total_steps) : st.total_steps;
    {
        Loader loader(sampler, st.cfg.workers, st.cfg.queue_capacity, st.step, end);
        while (st.step < end) {
            EpisodeBatch const batch = stack_episodes(loader.take(st.step), st.dtype());
            LossRecord const r = train_step(st, batch);
            if (opts.on_step) opts.on_step(r);
            if (!opts.out_dir.empty() && st.cfg.checkpoint_every > 0 && st.step % st.cfg.checkpoint_every == 0) {
                save_checkpoint(st, opts.out_dir / "checkpoints" / ("step_" + std::to_string(st.step) + ".ckpt"));
                write_history_csv(st.history, opts.out_dir / "history.csv");
            }
        }
    }
    if (!opts.out_dir.empty()) {
        save_checkpoint(st, opts.out_dir / "checkpoints" / "last.ckpt");
        write_history_csv(st.history, opts.out_dir / "history.csv");
    }
    return res;
}

} // namespace mass::train
