#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <variant>

#include <CLI11.hpp>
#include <json.hpp>

#include "meshreg/delaunay.hpp"
#include "meshreg/error.hpp"
#include "meshreg/estimators.hpp"
#include "meshreg/image_io.hpp"
#include "meshreg/kernel.hpp"
#include "meshreg/metrics.hpp"
#include "meshreg/phantoms.hpp"
#include "meshreg/solvers.hpp"
#include "meshreg/subspace.hpp"
#include "meshreg/tomography.hpp"

namespace meshreg::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string stem_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05zu", i);
    return buf;
}

std::string mesh_name(std::size_t l) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03zu", l);
    return buf;
}

Json number_or_inf(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

// One configurable parameter: a long flag plus the matching JSON key.
struct Field {
    std::string key;
    std::variant<int*, double*, std::uint64_t*, std::string*, std::vector<std::string>*> target;
    CLI::Option* option = nullptr;
    bool required = false;
};

class Command {
public:
    Command(CLI::App& parent, std::string name, const std::string& description)
        : name_(std::move(name)), app_(parent.add_subcommand(name_, description)) {
        app_->add_option("--config", config_path_, "JSON experiment config; flags override its values");
    }

    template <class T>
    Command& field(const std::string& key, T& var, const std::string& help, bool required = false) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        auto* opt = app_->add_option(flag, var, help);
        if constexpr (!std::is_same_v<T, std::vector<std::string>>) opt->capture_default_str();
        fields_.push_back({key, &var, opt, required});
        return *this;
    }

    void action(std::function<void(Command&)> fn) { action_ = std::move(fn); }

    const std::string& name() const noexcept { return name_; }
    bool parsed() const { return app_->parsed(); }
    const std::vector<Field>& fields() const noexcept { return fields_; }

    bool has_key(const std::string& key) const {
        return std::any_of(fields_.begin(), fields_.end(), [&](const Field& f) { return f.key == key; });
    }

    bool given(const std::string& key) const {
        for (const auto& f : fields_)
            if (f.key == key) return f.option->count() > 0 || from_config_.count(key) > 0;
        return false;
    }

    void load_config(const std::function<bool(const std::string&)>& known_anywhere) {
        if (config_path_.empty()) return;
        if (!fs::exists(config_path_)) throw IoError(config_path_, "missing input: " + config_path_);
        std::ifstream in(config_path_);
        Json cfg;
        try {
            cfg = Json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("config", std::string("config is not valid JSON: ") + e.what());
        }
        if (!cfg.is_object()) throw ParseError("config", "config must be a JSON object");
        for (const auto& [key, value] : cfg.items()) {
            auto it = std::find_if(fields_.begin(), fields_.end(), [&](const Field& f) { return f.key == key; });
            if (it == fields_.end()) {
                if (!known_anywhere(key)) throw ParseError(key, "config field '" + key + "' is not a known setting");
                continue;
            }
            if (it->option->count() > 0) continue;
            assign(*it, value);
            from_config_.insert(key);
        }
    }

    void check_required() const {
        for (const auto& f : fields_)
            if (f.required && !given(f.key)) throw ParseError(f.key, "required setting '" + f.key + "' is missing");
    }

    Json effective() const {
        Json out = Json::object();
        for (const auto& f : fields_) {
            std::visit(
                [&](auto* p) {
                    using T = std::remove_pointer_t<decltype(p)>;
                    if constexpr (std::is_same_v<T, double>)
                        out[f.key] = number_or_inf(*p);
                    else
                        out[f.key] = *p;
                },
                f.target);
        }
        return out;
    }

    void run() { action_(*this); }

private:
    static void assign(const Field& f, const Json& v) {
        auto bad = [&](const char* type) {
            return ParseError(f.key, "config field '" + f.key + "' must be " + type);
        };
        std::visit(
            [&](auto* p) {
                using T = std::remove_pointer_t<decltype(p)>;
                if constexpr (std::is_same_v<T, int>) {
                    if (!v.is_number_integer()) throw bad("an integer");
                    *p = v.get<int>();
                } else if constexpr (std::is_same_v<T, std::uint64_t>) {
                    if (!v.is_number_unsigned()) throw bad("a non-negative integer");
                    *p = v.get<std::uint64_t>();
                } else if constexpr (std::is_same_v<T, double>) {
                    if (v.is_string() && (v == "inf" || v == "+inf"))
                        *p = std::numeric_limits<double>::infinity();
                    else if (v.is_number())
                        *p = v.get<double>();
                    else
                        throw bad("a number or \"inf\"");
                } else if constexpr (std::is_same_v<T, std::string>) {
                    if (!v.is_string()) throw bad("a string");
                    *p = v.get<std::string>();
                } else {
                    if (!v.is_array()) throw bad("an array of strings");
                    p->clear();
                    for (const auto& e : v) {
                        if (!e.is_string()) throw bad("an array of strings");
                        p->push_back(e.get<std::string>());
                    }
                }
            },
            f.target);
    }

    std::string name_;
    CLI::App* app_;
    std::string config_path_;
    std::vector<Field> fields_;
    std::set<std::string> from_config_;
    std::function<void(Command&)> action_;
};

fs::path require_path(const std::string& p, const std::string& what) {
    if (p.empty()) throw ParseError(what, "setting '" + what + "' is empty");
    if (!fs::exists(p)) throw IoError(p, "missing input: " + p);
    return p;
}

std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<fs::path> list_meshes(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& p : list_files(dir, ".json"))
        if (p.filename().string().rfind("mesh_", 0) == 0) out.push_back(p);
    if (out.empty()) throw IoError(dir.string(), "missing input: no mesh_*.json in " + dir.string());
    return out;
}

StackedBasis load_stack(const fs::path& dir, const Grid& grid) {
    StackedBasis stack(grid);
    for (const auto& p : list_meshes(dir)) stack.add(rasterize(load_mesh(p), grid));
    return stack;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot write " + path.string());
    out << text;
}

void write_manifest(const fs::path& out_dir, const Command& cmd, std::uint64_t seed, Json extra) {
    Json m;
    m["command"] = cmd.name();
    const Json config = cmd.effective();
    m["config"] = config;
    m["config_hash"] = hex64(fnv1a(config.dump()));
    m["seed"] = seed;
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_text(out_dir / "manifest.json", m.dump(2) + "\n");
}

fs::path prepare_out(const std::string& out) {
    if (out.empty()) throw ParseError("out", "setting 'out' is empty");
    fs::create_directories(out);
    return out;
}

void write_coeffs(const fs::path& path, const Eigen::VectorXd& q) {
    std::string text;
    char buf[32];
    for (double v : q) {
        std::snprintf(buf, sizeof buf, "%.17g\n", v);
        text += buf;
    }
    write_text(path, text);
}

Eigen::VectorXd read_coeffs(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "missing input: " + path.string());
    std::vector<double> vals;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            vals.push_back(std::stod(line));
        } catch (const std::exception&) {
            throw ParseError("coefficient", "bad coefficient line '" + line + "' in " + path.string());
        }
    }
    return Eigen::Map<Eigen::VectorXd>(vals.data(), Eigen::Index(vals.size()));
}

// Rectangular 16-bit PGM strip; tiles share one intensity range.
void write_panel(const fs::path& path, const std::vector<const Image*>& tiles) {
    const int side = tiles.front()->side();
    const int width = side * int(tiles.size());
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto* t : tiles) {
        lo = std::min(lo, t->values().minCoeff());
        hi = std::max(hi, t->values().maxCoeff());
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot write " + path.string());
    char range[96];
    std::snprintf(range, sizeof range, "# meshreg-range %.17g %.17g\n", lo, hi);
    out << "P5\n" << range << width << ' ' << side << "\n65535\n";
    for (int r = 0; r < side; ++r)
        for (const auto* t : tiles)
            for (int c = 0; c < side; ++c) {
                const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(((*t)(r, c) - lo) / span, 0.0, 1.0) * 65535));
                const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
                out.write(bytes, 2);
            }
}

struct Settings {
    std::string out;
    std::uint64_t seed = 0;
    int threads = 0;
    int count = 10;
    int grid_side = 32;
    std::string kind = "shapes";
    int min_shapes = 2;
    int max_shapes = 6;
    int cells = 4;
    int triangles = 50;
    int subspaces = 10;
    int sensors = 25;
    std::string data, warm, meshes, measurements, model, coeffs;
    double snr_db = kNoiseless;
    double erasure_p = 0.0;
    double tv_weight = 0.0;
    int max_iters = 500;
    double tol = 1e-8;
    std::string estimator = "per_mesh_affine";
    int epochs = 100;
    int batch_size = 32;
    double learning_rate = 1e-3;
    std::string optimizer = "adam";
    double validation_fraction = 0.1;
    double weight_decay = 0.0;
    int hidden = 16;
    std::string backend = "oracle";
    int trials = 500;
    std::vector<std::string> method;
};

SolveOptions solve_options(const Settings& s, double tv_weight) {
    SolveOptions o;
    o.max_iters = s.max_iters;
    o.tol = s.tol;
    o.tv_weight = tv_weight;
    o.validate();
    return o;
}

std::vector<std::pair<std::string, Image>> load_images(const fs::path& dir) {
    std::vector<std::pair<std::string, Image>> out;
    for (const auto& p : list_files(dir, ".f32raw")) out.emplace_back(p.stem().string(), load_image(p));
    if (out.empty()) throw IoError(dir.string(), "missing input: no .f32raw images in " + dir.string());
    for (const auto& [name, img] : out) require_same_grid(img.grid(), out.front().second.grid(), "image set");
    return out;
}

void cmd_gen_data(Command& cmd, Settings& s) {
    if (s.count < 1) throw ParseError("count", "count must be >= 1");
    const auto out = prepare_out(s.out);
    const Grid grid(s.grid_side);
    Json images = Json::array();
    if (s.kind == "shapes") {
        ShapesConfig cfg;
        cfg.count = s.count;
        cfg.side = s.grid_side;
        cfg.min_shapes = s.min_shapes;
        cfg.max_shapes = s.max_shapes;
        cfg.seed = Seed{s.seed};
        cfg.validate();
        const auto imgs = gen_shapes(cfg);
        for (std::size_t i = 0; i < imgs.size(); ++i) {
            save_image(imgs[i], out / (stem_name(i) + ".f32raw"));
            images.push_back({{"file", stem_name(i) + ".f32raw"}, {"seed", image_seed(cfg, int(i)).value}});
        }
    } else if (s.kind == "checkerboard" || s.kind == "point") {
        const std::pair<int, int> center{s.grid_side / 2, s.grid_side / 2};
        const Image img = s.kind == "checkerboard" ? gen_checkerboard(s.grid_side, s.cells)
                                                   : point_image(grid, std::span(&center, 1));
        for (int i = 0; i < s.count; ++i) {
            save_image(img, out / (stem_name(std::size_t(i)) + ".f32raw"));
            images.push_back({{"file", stem_name(std::size_t(i)) + ".f32raw"}});
        }
    } else {
        throw ParseError("kind", "kind must be shapes, checkerboard or point, got '" + s.kind + "'");
    }
    write_manifest(out, cmd, s.seed, {{"images", images}});
}

void cmd_gen_mesh(Command& cmd, Settings& s) {
    if (s.subspaces < 1) throw ParseError("subspaces", "subspaces must be >= 1");
    if (s.triangles < 2) throw ParseError("triangles", "triangles must be >= 2");
    const auto out = prepare_out(s.out);
    Json meshes = Json::array();
    for (int l = 0; l < s.subspaces; ++l) {
        const Seed seed = derive_seed(Seed{s.seed}, std::uint64_t(l));
        const std::string file = "mesh_" + mesh_name(std::size_t(l)) + ".json";
        save_mesh(mesh_with_k_triangles(s.triangles, seed), out / file);
        meshes.push_back({{"file", file}, {"seed", seed.value}});
    }
    write_manifest(out, cmd, s.seed, {{"meshes", meshes}});
}

void cmd_forward(Command& cmd, Settings& s) {
    const auto images = load_images(require_path(s.data, "data"));
    const auto out = prepare_out(s.out);
    const RayMatrix a = build_ray_matrix(place_sensors(s.sensors), images.front().second.grid());
    save_ray_matrix(a, out / "ray_matrix.txt");
    Json files = Json::array();
    for (const auto& [name, img] : images) {
        save_measurement(forward(a, img), out / (name + ".csv"));
        files.push_back(name + ".csv");
    }
    write_manifest(out, cmd, s.seed, {{"rows", a.rows()}, {"measurements", files}});
}

std::vector<fs::path> list_measurements(const fs::path& dir) {
    auto files = list_files(dir, ".csv");
    if (files.empty()) throw IoError(dir.string(), "missing input: no measurement .csv files in " + dir.string());
    return files;
}

void cmd_corrupt(Command& cmd, Settings& s) {
    const auto dir = require_path(s.measurements, "measurements");
    if (!(s.erasure_p >= 0.0 && s.erasure_p <= 1.0)) throw ParseError("erasure_p", "erasure_p must be in [0, 1]");
    const auto files = list_measurements(dir);
    const auto out = prepare_out(s.out);
    fs::copy_file(require_path((dir / "ray_matrix.txt").string(), "measurements"), out / "ray_matrix.txt",
                  fs::copy_options::overwrite_existing);
    Json entries = Json::array();
    for (std::size_t i = 0; i < files.size(); ++i) {
        const Seed noise_seed = derive_seed(Seed{s.seed}, 1, i);
        const Seed erase_seed = derive_seed(Seed{s.seed}, 2, i);
        Measurement y = add_gaussian_noise(load_measurement(files[i]), s.snr_db, noise_seed);
        y = erase(y, s.erasure_p, erase_seed);
        save_measurement(y, out / files[i].filename());
        entries.push_back({{"file", files[i].filename().string()},
                           {"noise_seed", noise_seed.value},
                           {"erasure_seed", erase_seed.value},
                           {"erased", y.erased_count()}});
    }
    write_manifest(out, cmd, s.seed, {{"measurements", entries}});
}

void cmd_nnls(Command& cmd, Settings& s) {
    const auto dir = require_path(s.measurements, "measurements");
    const RayMatrix a = load_ray_matrix(require_path((dir / "ray_matrix.txt").string(), "measurements"));
    const auto files = list_measurements(dir);
    const SolveOptions opts = solve_options(s, s.tv_weight);
    const auto out = prepare_out(s.out);
    Json entries = Json::array();
    for (const auto& f : files) {
        const Measurement y = load_measurement(f);
        const SolveResult r = s.tv_weight > 0.0 ? tv_direct(a, y, opts) : nnls(a, y, opts);
        save_image(r.image, out / (f.stem().string() + ".f32raw"));
        entries.push_back({{"file", f.stem().string() + ".f32raw"},
                           {"iterations", r.iterations},
                           {"converged", r.converged},
                           {"objective", r.objective}});
    }
    write_manifest(out, cmd, s.seed, {{"solver", s.tv_weight > 0.0 ? "tv_direct" : "nnls"}, {"images", entries}});
}

OptimizerKind optimizer_from(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd") return OptimizerKind::sgd;
    throw ParseError("optimizer", "optimizer must be adam or sgd, got '" + name + "'");
}

void cmd_train(Command& cmd, Settings& s) {
    const auto truth = load_images(require_path(s.data, "data"));
    const auto warm = load_images(require_path(s.warm, "warm"));
    const StackedBasis stack = load_stack(require_path(s.meshes, "meshes"), truth.front().second.grid());
    std::map<std::string, const Image*> warm_by_name;
    for (const auto& [name, img] : warm) warm_by_name[name] = &img;
    std::vector<TrainingExample> data;
    for (const auto& [name, img] : truth) {
        auto it = warm_by_name.find(name);
        if (it == warm_by_name.end()) throw IoError((fs::path(s.warm) / (name + ".f32raw")).string(),
                                                    "missing input: warm start for " + name);
        data.push_back({img, *it->second});
    }
    TrainConfig cfg;
    cfg.epochs = s.epochs;
    cfg.batch_size = s.batch_size;
    cfg.learning_rate = s.learning_rate;
    cfg.optimizer = optimizer_from(s.optimizer);
    cfg.validation_fraction = s.validation_fraction;
    cfg.weight_decay = s.weight_decay;
    cfg.hidden = s.hidden;
    cfg.seed = Seed{s.seed};
    EstimatorKind kind;
    try {
        kind = estimator_kind_from_string(s.estimator);
    } catch (const ArgumentError& e) {
        throw ParseError("estimator", e.what());
    }
    const auto out = prepare_out(s.out);
    std::string losses = "mesh,epoch,train,validation\n";
    auto log_losses = [&](const std::string& mesh, const TrainReport& r) {
        char buf[128];
        for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
            std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g\n", mesh.c_str(), e + 1, r.train_loss[e],
                          r.validation_loss[e]);
            losses += buf;
        }
    };
    Json files = Json::array();
    if (kind == EstimatorKind::per_mesh_affine) {
        const auto reports = train_ensemble(data, stack, cfg, s.threads);
        for (std::size_t l = 0; l < reports.size(); ++l) {
            const std::string file = "estimator_" + mesh_name(l) + ".bin";
            reports[l].estimator.save(out / file);
            log_losses(mesh_name(l), reports[l]);
            files.push_back(file);
        }
    } else {
        const auto report = train_estimator(data, stack, cfg);
        report.estimator.save(out / "estimator.bin");
        log_losses("all", report);
        files.push_back("estimator.bin");
    }
    write_text(out / "loss.csv", losses);
    write_manifest(out, cmd, s.seed, {{"estimators", files}, {"examples", data.size()}});
}

void cmd_estimate(Command& cmd, Settings& s) {
    const auto mesh_dir = require_path(s.meshes, "meshes");
    const auto out = prepare_out(s.out);
    std::vector<std::pair<std::string, std::vector<Eigen::VectorXd>>> results;

    if (s.backend == "oracle") {
        const auto truth = load_images(require_path(s.data, "data"));
        const StackedBasis stack = load_stack(mesh_dir, truth.front().second.grid());
        for (const auto& [name, img] : truth) {
            std::vector<Eigen::VectorXd> qs;
            for (const auto& b : stack.bases()) qs.push_back(oracle_coeffs(b, img));
            results.emplace_back(name, std::move(qs));
        }
    } else if (s.backend == "oblique") {
        const auto dir = require_path(s.measurements, "measurements");
        const RayMatrix a = load_ray_matrix(require_path((dir / "ray_matrix.txt").string(), "measurements"));
        const StackedBasis stack = load_stack(mesh_dir, a.grid());
        std::vector<ObliqueOperator> ops;
        for (const auto& b : stack.bases()) ops.push_back(build_oblique(a, b));
        for (const auto& f : list_measurements(dir)) {
            const Measurement y = load_measurement(f);
            std::vector<Eigen::VectorXd> qs;
            for (const auto& op : ops) qs.push_back(oblique_coeffs(op, y));
            results.emplace_back(f.stem().string(), std::move(qs));
        }
    } else if (s.backend == "learned") {
        const auto warm = load_images(require_path(s.warm, "warm"));
        const auto model_dir = require_path(s.model, "model");
        const StackedBasis stack = load_stack(mesh_dir, warm.front().second.grid());
        std::vector<Estimator> ests;
        if (fs::exists(model_dir / "estimator.bin")) {
            ests.push_back(Estimator::load(model_dir / "estimator.bin"));
        } else {
            for (std::size_t l = 0; l < stack.subspace_count(); ++l)
                ests.push_back(Estimator::load(
                    require_path((model_dir / ("estimator_" + mesh_name(l) + ".bin")).string(), "model")));
        }
        for (const auto& [name, img] : warm) {
            std::vector<Eigen::VectorXd> qs;
            for (std::size_t l = 0; l < stack.subspace_count(); ++l)
                qs.push_back(estimate_coeffs(ests.size() == 1 ? ests.front() : ests[l], stack[l], img));
            results.emplace_back(name, std::move(qs));
        }
    } else {
        throw ParseError("backend", "backend must be oracle, oblique or learned, got '" + s.backend + "'");
    }

    Json images = Json::array();
    for (const auto& [name, qs] : results) {
        fs::create_directories(out / name);
        for (std::size_t l = 0; l < qs.size(); ++l) write_coeffs(out / name / (mesh_name(l) + ".txt"), qs[l]);
        images.push_back(name);
    }
    write_manifest(out, cmd, s.seed, {{"backend", s.backend}, {"images", images}});
}

void cmd_reconstruct(Command& cmd, Settings& s) {
    const auto coeff_dir = require_path(s.coeffs, "coeffs");
    const StackedBasis stack = load_stack(require_path(s.meshes, "meshes"), Grid(s.grid_side));
    const SolveOptions opts = solve_options(s, s.tv_weight);
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(coeff_dir))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw IoError(coeff_dir.string(), "missing input: no coefficient folders in " + coeff_dir.string());
    const auto out = prepare_out(s.out);
    Json entries = Json::array();
    for (const auto& d : dirs) {
        Eigen::VectorXd q(stack.total_columns());
        for (std::size_t l = 0; l < stack.subspace_count(); ++l) {
            const fs::path f = d / (mesh_name(l) + ".txt");
            const Eigen::VectorXd ql = read_coeffs(f);
            if (ql.size() != stack[l].column_count())
                throw ParseError("coefficient", f.string() + " has " + std::to_string(ql.size()) +
                                                    " coefficients, mesh needs " +
                                                    std::to_string(stack[l].column_count()));
            q.segment(stack.offset(l), ql.size()) = ql;
        }
        const SolveResult r = solve_reformulated(stack, q, opts);
        save_image(r.image, out / (d.filename().string() + ".f32raw"));
        entries.push_back(
            {{"file", d.filename().string() + ".f32raw"}, {"iterations", r.iterations}, {"converged", r.converged}});
    }
    write_manifest(out, cmd, s.seed, {{"images", entries}});
}

void cmd_kernel_mc(Command& cmd, Settings& s, std::ostream& log) {
    KernelOptions opts;
    opts.triangles = s.triangles;
    opts.subspaces = s.subspaces;
    opts.trials = s.trials;
    opts.seed = Seed{s.seed};
    opts.threads = s.threads;
    try {
        opts.validate();
    } catch (const ArgumentError& e) {
        throw ParseError("trials", e.what());
    }
    const Grid grid(s.grid_side);
    const std::pair<int, int> center{s.grid_side / 2, s.grid_side / 2};
    const KernelEstimate est = mc_expected_recon(point_image(grid, std::span(&center, 1)), opts);
    const auto out = prepare_out(s.out);
    save_image(est.mean_image, out / "mean.f32raw");
    save_radial_csv(est.radial_profile, out / "radial.csv");
    const double hw = half_width(est.radial_profile);
    const IsotropyReport iso = isotropy_check(est);
    Json iso_json = {{"angular_cv", iso.angular_cv}, {"pass", iso.pass}};
    if (!iso.note.empty()) iso_json["note"] = iso.note;
    write_manifest(out, cmd, s.seed, {{"half_width", hw}, {"isotropy", iso_json}});
    log << "half-width " << hw << " px, angular CV " << iso.angular_cv << (iso.pass ? " (isotropic)" : "") << '\n';
}

void cmd_evaluate(Command& cmd, Settings& s, std::ostream& log) {
    const auto truth = load_images(require_path(s.data, "data"));
    if (s.method.empty()) throw ParseError("method", "at least one --method name=dir is required");
    std::vector<std::pair<std::string, fs::path>> methods;
    for (const auto& m : s.method) {
        const auto eq = m.find('=');
        if (eq == std::string::npos || eq == 0) throw ParseError("method", "method must look like name=dir, got '" + m + "'");
        methods.emplace_back(m.substr(0, eq), require_path(m.substr(eq + 1), "method"));
    }
    const auto out = prepare_out(s.out);
    fs::create_directories(out / "panels");
    std::string csv = "image,method,snr_db\n";
    std::vector<double> sums(methods.size(), 0.0);
    for (const auto& [name, x] : truth) {
        std::vector<Image> recons;
        for (const auto& [method, dir] : methods) {
            const fs::path f = dir / (name + ".f32raw");
            if (!fs::exists(f)) throw IoError(f.string(), "missing input: " + f.string());
            recons.push_back(load_image(f));
            require_same_grid(x.grid(), recons.back().grid(), "evaluate");
        }
        std::vector<const Image*> tiles{&x};
        for (std::size_t k = 0; k < methods.size(); ++k) {
            const double snr = output_snr(x, recons[k]);
            sums[k] += snr;
            char buf[160];
            std::snprintf(buf, sizeof buf, "%s,%s,%.6f\n", name.c_str(), methods[k].first.c_str(), snr);
            csv += buf;
            tiles.push_back(&recons[k]);
        }
        write_panel(out / "panels" / (name + ".pgm"), tiles);
    }
    write_text(out / "snr.csv", csv);
    Json mean = Json::object();
    for (std::size_t k = 0; k < methods.size(); ++k) {
        mean[methods[k].first] = sums[k] / double(truth.size());
        log << methods[k].first << ": mean output SNR " << sums[k] / double(truth.size()) << " dB\n";
    }
    write_manifest(out, cmd, s.seed, {{"images", truth.size()}, {"mean_snr_db", mean}});
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"meshreg: random-mesh projection pipeline for sparse-view traveltime tomography"};
    app.require_subcommand(1);
    Settings s;
    std::vector<std::unique_ptr<Command>> commands;
    auto add = [&](const std::string& name, const std::string& description) -> Command& {
        commands.push_back(std::make_unique<Command>(app, name, description));
        return *commands.back();
    };

    auto& gen_data = add("gen-data", "Generate a synthetic image dataset");
    gen_data.field("out", s.out, "output folder", true)
        .field("count", s.count, "number of images")
        .field("grid_side", s.grid_side, "image side in pixels")
        .field("kind", s.kind, "shapes | checkerboard | point")
        .field("min_shapes", s.min_shapes, "fewest shapes per image")
        .field("max_shapes", s.max_shapes, "most shapes per image")
        .field("cells", s.cells, "checkerboard cells per side")
        .field("seed", s.seed, "random seed");
    gen_data.action([&](Command& c) { cmd_gen_data(c, s); });

    auto& gen_mesh = add("gen-mesh", "Draw random Delaunay meshes");
    gen_mesh.field("out", s.out, "output folder", true)
        .field("triangles", s.triangles, "triangles per mesh")
        .field("subspaces", s.subspaces, "number of meshes")
        .field("seed", s.seed, "random seed");
    gen_mesh.action([&](Command& c) { cmd_gen_mesh(c, s); });

    auto& fwd = add("forward", "Simulate traveltime measurements");
    fwd.field("out", s.out, "output folder", true)
        .field("data", s.data, "image folder", true)
        .field("sensors", s.sensors, "sensors on the inscribed circle")
        .field("seed", s.seed, "recorded in the manifest");
    fwd.action([&](Command& c) { cmd_forward(c, s); });

    auto& corrupt = add("corrupt", "Add Gaussian noise and erasures to measurements");
    corrupt.field("out", s.out, "output folder", true)
        .field("measurements", s.measurements, "measurement folder", true)
        .field("snr_db", s.snr_db, "input SNR in dB, inf for none")
        .field("erasure_p", s.erasure_p, "erasure probability")
        .field("seed", s.seed, "random seed");
    corrupt.action([&](Command& c) { cmd_corrupt(c, s); });

    auto& nnls_cmd = add("nnls", "Warm-start reconstruction (direct TV when --tv-weight > 0)");
    nnls_cmd.field("out", s.out, "output folder", true)
        .field("measurements", s.measurements, "measurement folder", true)
        .field("tv_weight", s.tv_weight, "TV weight; 0 runs plain box-constrained least squares")
        .field("max_iters", s.max_iters, "iteration cap")
        .field("tol", s.tol, "relative objective tolerance")
        .field("seed", s.seed, "recorded in the manifest");
    nnls_cmd.action([&](Command& c) { cmd_nnls(c, s); });

    auto& train = add("train", "Train projection-coefficient estimators");
    train.field("out", s.out, "output folder", true)
        .field("data", s.data, "ground-truth image folder", true)
        .field("warm", s.warm, "warm-start image folder", true)
        .field("meshes", s.meshes, "mesh folder", true)
        .field("estimator", s.estimator, "per_mesh_affine | shared_pooled")
        .field("epochs", s.epochs, "training epochs")
        .field("batch_size", s.batch_size, "minibatch size")
        .field("learning_rate", s.learning_rate, "step size")
        .field("optimizer", s.optimizer, "adam | sgd")
        .field("validation_fraction", s.validation_fraction, "held-out fraction")
        .field("weight_decay", s.weight_decay, "L2 penalty on weights")
        .field("hidden", s.hidden, "hidden width of the shared estimator")
        .field("seed", s.seed, "random seed")
        .field("threads", s.threads, "worker threads, 0 for all cores");
    train.action([&](Command& c) { cmd_train(c, s); });

    auto& estimate = add("estimate", "Estimate projection coefficients");
    estimate.field("out", s.out, "output folder", true)
        .field("backend", s.backend, "oracle | oblique | learned")
        .field("meshes", s.meshes, "mesh folder", true)
        .field("data", s.data, "ground-truth images (oracle)")
        .field("measurements", s.measurements, "measurement folder (oblique)")
        .field("warm", s.warm, "warm-start images (learned)")
        .field("model", s.model, "trained estimator folder (learned)")
        .field("seed", s.seed, "recorded in the manifest");
    estimate.action([&](Command& c) { cmd_estimate(c, s); });

    auto& recon = add("reconstruct", "Recombine coefficients by TV-regularized least squares");
    recon.field("out", s.out, "output folder", true)
        .field("coeffs", s.coeffs, "coefficient folder", true)
        .field("meshes", s.meshes, "mesh folder", true)
        .field("grid_side", s.grid_side, "image side in pixels")
        .field("tv_weight", s.tv_weight, "TV weight")
        .field("max_iters", s.max_iters, "iteration cap")
        .field("tol", s.tol, "relative objective tolerance")
        .field("seed", s.seed, "recorded in the manifest");
    recon.action([&](Command& c) { cmd_reconstruct(c, s); });

    auto& kernel = add("kernel-mc", "Monte Carlo estimate of the equivalent kernel");
    kernel.field("out", s.out, "output folder", true)
        .field("grid_side", s.grid_side, "image side in pixels")
        .field("triangles", s.triangles, "triangles per mesh")
        .field("subspaces", s.subspaces, "meshes per trial")
        .field("trials", s.trials, "Monte Carlo trials")
        .field("seed", s.seed, "random seed")
        .field("threads", s.threads, "worker threads, 0 for all cores");
    kernel.action([&](Command& c) { cmd_kernel_mc(c, s, out); });

    auto& evaluate = add("evaluate", "Output SNR table and comparison panels");
    evaluate.field("out", s.out, "output folder", true)
        .field("data", s.data, "ground-truth image folder", true)
        .field("method", s.method, "name=folder of reconstructions; repeatable", true)
        .field("seed", s.seed, "recorded in the manifest");
    evaluate.action([&](Command& c) { cmd_evaluate(c, s, out); });

    auto known_anywhere = [&](const std::string& key) {
        return std::any_of(commands.begin(), commands.end(), [&](const auto& c) { return c->has_key(key); });
    };

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    for (auto& c : commands) {
        if (!c->parsed()) continue;
        try {
            c->load_config(known_anywhere);
            c->check_required();
            c->run();
            return kOk;
        } catch (const ParseError& e) {
            err << "config error [" << e.field() << "]: " << e.what() << '\n';
            return kConfigError;
        } catch (const ArgumentError& e) {
            err << "config error: " << e.what() << '\n';
            return kConfigError;
        } catch (const IoError& e) {
            err << "missing input: " << e.path() << " (" << e.what() << ")\n";
            return kMissingInput;
        } catch (const fs::filesystem_error& e) {
            err << "missing input: " << e.path1().string() << " (" << e.what() << ")\n";
            return kMissingInput;
        } catch (const NumericalError& e) {
            err << "numerical failure: " << e.what() << '\n';
            return kNumericalError;
        }
    }
    return kUsage;
}

}  // namespace meshreg::cli
