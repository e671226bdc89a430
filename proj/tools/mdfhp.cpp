#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdfhp/catalog.hpp"
#include "mdfhp/estimate.hpp"
#include "mdfhp/infogain.hpp"
#include "mdfhp/parallel.hpp"
#include "mdfhp/residual.hpp"
#include "mdfhp/simulate.hpp"

using nlohmann::json;
using namespace mdfhp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitConsistency = 4;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConsistencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Reads run configuration from JSON. Top-level keys set options of the main
// app; nested objects address subcommands, e.g. {"fit": {"restarts": 3}}.
// Values given on the command line take precedence.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        json j;
        for (const CLI::Option* opt : app->get_options({})) {
            if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
            const std::string name = opt->get_lnames().front();
            if (opt->count() > 0) {
                const auto& res = opt->results();
                j[name] = res.size() == 1 ? json(res.front()) : json(res);
            } else if (default_also && !opt->get_default_str().empty()) {
                j[name] = opt->get_default_str();
            }
        }
        return j.dump(2);
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        json j;
        try {
            input >> j;
        } catch (const json::exception& e) {
            throw CLI::ConversionError("config", std::string("invalid JSON: ") + e.what());
        }
        std::vector<CLI::ConfigItem> items;
        collect(j, {}, items);
        return items;
    }

private:
    static std::string scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

    static void collect(const json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& items) {
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                auto p = parents;
                p.push_back(key);
                collect(value, p, items);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            } else {
                item.inputs.push_back(scalar(value));
            }
            items.push_back(std::move(item));
        }
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    return out;
}

void write_json(const std::string& path, const json& j) {
    auto out = open_output(path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path);
}

struct Provenance {
    std::optional<std::uint64_t> seed;
    std::vector<std::pair<std::string, std::string>> inputs;  // role, sha256

    json to_json() const {
        json in = json::object();
        for (const auto& [role, hash] : inputs) in[role] = hash;
        json j{{"tool", "mdfhp"}, {"version", MDFHP_VERSION}, {"inputs", in}};
        j["seed"] = seed ? json(*seed) : json(nullptr);
        return j;
    }

    // Comment lines for CSV and SVG outputs.
    std::string comment(const std::string& prefix, const std::string& suffix = "") const {
        std::ostringstream s;
        s << prefix << "mdfhp " << MDFHP_VERSION;
        if (seed) s << " seed=" << *seed;
        for (const auto& [role, hash] : inputs) s << ' ' << role << "_sha256=" << hash;
        s << suffix << '\n';
        return s.str();
    }
};

struct LoadedCatalogue {
    Catalogue cat;
    std::string hash;
};

LoadedCatalogue load_catalogue_file(const std::string& path) {
    read_file(path);  // surfaces missing files as I/O errors
    LoadedCatalogue lc;
    lc.cat = load_catalogue(path, &lc.hash);
    return lc;
}

struct LoadedFit {
    FitResult fit;
    std::string file_hash;
};

LoadedFit load_fit_file(const std::string& path) {
    const std::string bytes = read_file(path);
    json j;
    try {
        j = json::parse(bytes);
    } catch (const json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return {fit_from_json(j), sha256_hex(bytes)};
}

void check_fit_matches(const LoadedFit& f, const LoadedCatalogue& c, bool allow_mismatch) {
    if (f.fit.catalogue_hash.empty() || f.fit.catalogue_hash == c.hash) return;
    const std::string msg = "fit was estimated on catalogue " + f.fit.catalogue_hash + " but the supplied catalogue is " + c.hash;
    if (!allow_mismatch) throw ConsistencyError(msg + " (use --allow-hash-mismatch to override)");
    std::cerr << "warning: " << msg << '\n';
}

Region parse_region_box(const std::string& text) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            v.push_back(std::stod(part));
        } catch (const std::exception&) {
            throw UsageError("region bounds must be numbers: " + text);
        }
    }
    if (v.size() != 4) throw UsageError("region must be japan, middle-america or lon_min,lon_max,lat_min,lat_max");
    Region r{v[0], v[1], v[2], v[3]};
    try {
        validate(r);
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("bad region: ") + e.what());
    }
    return r;
}

struct QueryArgs {
    std::string region;
    std::optional<double> m0;
    std::string start;
    std::string end;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--region", region, "japan, middle-america or lon_min,lon_max,lat_min,lat_max")->required();
        cmd->add_option("--m0", m0, "completeness magnitude (defaults to the preset's)");
        cmd->add_option("--start", start, "window start, ISO-8601 (defaults to the preset's)");
        cmd->add_option("--end", end, "window end, ISO-8601 (defaults to the preset's)");
    }

    UsgsQuery query() const {
        UsgsQuery q;
        bool preset = true;
        if (region == "japan") {
            q = japan_query();
        } else if (region == "middle-america") {
            q = middle_america_query();
        } else {
            q.region = parse_region_box(region);
            preset = false;
        }
        if (m0) q.min_magnitude = *m0;
        if (!start.empty()) q.start = start;
        if (!end.empty()) q.end = end;
        if (!preset && (!m0 || start.empty() || end.empty()))
            throw UsageError("a custom region needs --m0, --start and --end");
        try {
            if (parse_iso8601(q.start) >= parse_iso8601(q.end)) throw UsageError("--start must precede --end");
        } catch (const ParseError& e) {
            throw UsageError(e.what());
        }
        return q;
    }
};

std::string fmt(double v, int precision = 3) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

void print_fit_summary(const FitResult& f) {
    std::cout << "model " << to_string(f.model_type) << ", " << f.n_events << " events, " << f.n_params
              << " parameters\n";
    std::cout << "log-likelihood " << fmt(f.loglik, 2) << "  AIC " << fmt(f.aic, 1) << "  BIC " << fmt(f.bic, 1)
              << (f.converged ? "" : "  (not converged)") << '\n';
    const int pct = static_cast<int>(std::lround(100 * f.ci_level));
    std::cout << std::left << std::setw(14) << "parameter" << std::right << std::setw(12) << "estimate"
              << std::setw(26) << (std::to_string(pct) + "% interval") << '\n';
    for (const auto& p : f.ci) {
        std::cout << std::left << std::setw(14) << p.name << std::right << std::setw(12) << fmt(p.estimate);
        if (p.available)
            std::cout << std::setw(26) << ("(" + fmt(p.lo) + ", " + fmt(p.hi) + ")");
        else
            std::cout << std::setw(26) << "unavailable";
        std::cout << '\n';
    }
}

std::vector<MagnitudeClass> classes_from_edges(double m0, const std::vector<double>& edges) {
    std::vector<MagnitudeClass> classes;
    double lo = m0;
    for (const double e : edges) {
        classes.push_back({lo, e});
        lo = e;
    }
    classes.push_back({lo, kMaxMagnitude});
    try {
        validate_classes(classes, m0);
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("bad --classes: ") + e.what());
    }
    return classes;
}

void print_igain(const IgainReport& r) {
    std::cout << std::left << std::setw(16) << "class" << std::right << std::setw(7) << "N_S" << std::setw(10) << "G_S"
              << std::setw(7) << "N_F" << std::setw(10) << "G_F" << std::setw(7) << "N" << std::setw(10) << "G"
              << std::setw(10) << "rho_T" << std::setw(10) << "se" << '\n';
    for (const auto& c : r.classes) {
        std::cout << std::left << std::setw(16) << ("[" + fmt(c.cls.lo, 2) + ", " + fmt(c.cls.hi, 2) + ")") << std::right
                  << std::setw(7) << c.n_s << std::setw(10) << fmt(c.g_s, 2) << std::setw(7) << c.n_f << std::setw(10)
                  << fmt(c.g_f, 2) << std::setw(7) << c.n_total << std::setw(10) << fmt(c.g_total, 2) << std::setw(10)
                  << fmt(c.rho_t, 4) << std::setw(10) << fmt(c.rho_t_se, 4) << '\n';
        if (c.clamped_low + c.clamped_high > 0)
            std::cout << "  probability clamped in " << c.clamped_low + c.clamped_high << " windows\n";
    }
}

KsAlternative parse_alternative(const std::string& s) {
    if (s == "two-sided") return KsAlternative::two_sided;
    if (s == "greater") return KsAlternative::greater;
    if (s == "less") return KsAlternative::less;
    throw UsageError("--alternative must be two-sided, greater or less");
}

// ---------------------------------------------------------------------------
// Commands

struct FetchArgs {
    QueryArgs q;
    std::string out;
    std::string raw_out;
    std::string endpoint = kUsgsEndpoint;
    int timeout = 60;
};

int cmd_fetch(const FetchArgs& a) {
    const UsgsQuery query = a.q.query();
    FetchOptions fo;
    fo.timeout_seconds = a.timeout;
    const std::string csv = fetch_usgs(query, a.endpoint, fo);
    if (!a.raw_out.empty()) {
        auto out = open_output(a.raw_out);
        out << csv;
    }
    Catalogue cat = parse_usgs_csv(std::string_view(csv), ingest_options_for(query));
    cat.source_meta["format"] = "usgs-csv";
    cat.source_meta["endpoint"] = a.endpoint;
    cat.source_meta["tool_version"] = MDFHP_VERSION;
    const std::string hash = save_catalogue(cat, a.out);
    std::cout << cat.size() << " events, sha256 " << hash << '\n';
    return kExitOk;
}

struct IngestArgs {
    QueryArgs q;
    std::string csv;
    std::string out;
    std::string horizon = "query-end";
};

int cmd_ingest(const IngestArgs& a) {
    const UsgsQuery query = a.q.query();
    IngestOptions io = ingest_options_for(query);
    if (a.horizon == "last-event")
        io.horizon = HorizonMode::last_event;
    else if (a.horizon != "query-end")
        throw UsageError("--horizon must be query-end or last-event");
    const std::string bytes = read_file(a.csv);
    Catalogue cat = parse_usgs_csv(std::string_view(bytes), io);
    cat.source_meta["format"] = "usgs-csv";
    cat.source_meta["input_sha256"] = sha256_hex(bytes);
    cat.source_meta["tool_version"] = MDFHP_VERSION;
    const std::string hash = save_catalogue(cat, a.out);
    std::cout << cat.size() << " events over " << fmt(cat.horizon_t, 2) << " days, sha256 " << hash << '\n';
    return kExitOk;
}

struct FitArgs {
    std::string catalogue;
    std::string model;
    std::vector<double> cuts;
    std::string init;
    std::string out;
    int restarts = 10;
    std::uint64_t seed = 1;
    int threads = default_threads();
    double level = 0.90;
    bool no_polish = false;
};

FitOptions fit_options(const FitArgs& a) {
    FitOptions fo;
    fo.restarts = a.restarts;
    fo.seed = a.seed;
    fo.threads = a.threads;
    fo.level = a.level;
    fo.polish = !a.no_polish;
    return fo;
}

int cmd_fit(const FitArgs& a) {
    ModelType type;
    try {
        type = parse_model_type(a.model);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (type == ModelType::mdfhp && a.cuts.empty()) throw UsageError("--cuts is required for --model mdfhp");
    if (type == ModelType::etas && !a.cuts.empty()) throw UsageError("--cuts only applies to --model mdfhp");
    const auto lc = load_catalogue_file(a.catalogue);
    std::optional<ModelParams> init;
    Provenance prov{a.seed, {{"catalogue", lc.hash}}};
    if (!a.init.empty()) {
        const std::string bytes = read_file(a.init);
        init = model_from_json(json::parse(bytes));
        prov.inputs.emplace_back("init", sha256_hex(bytes));
    }
    const FitResult f = fit(type, lc.cat, a.cuts, init, fit_options(a));
    json j = fit_to_json(f);
    j["provenance"] = prov.to_json();
    write_json(a.out, j);
    print_fit_summary(f);
    if (!f.converged) std::cerr << "warning: the optimiser did not meet its convergence tolerance\n";
    return kExitOk;
}

struct ResidualArgs {
    std::string fit;
    std::string catalogue;
    std::string out;
    std::string alternative = "two-sided";
    bool allow_mismatch = false;
};

int cmd_residuals(const ResidualArgs& a) {
    const auto lf = load_fit_file(a.fit);
    const auto lc = load_catalogue_file(a.catalogue);
    check_fit_matches(lf, lc, a.allow_mismatch);
    const Provenance prov{std::nullopt, {{"catalogue", lc.hash}, {"fit", lf.file_hash}}};

    const auto series = transformed_times(lf.fit, lc.cat);
    const auto diags = diagnose(series, parse_alternative(a.alternative));
    json report{{"diagnostics", diagnostics_to_json(diags)}, {"provenance", prov.to_json()}};
    if (const auto* p = std::get_if<MdfhpParams>(&lf.fit.params); p && p->nb > 1) {
        json cross = json::array();
        for (const auto& c : cross_stream_independence(*p, lc.cat))
            cross.push_back({{"a", c.a + 1}, {"b", c.b + 1}, {"statistic", c.test.statistic}, {"p_value", c.test.p_value}, {"n", c.test.n}});
        report["cross_stream"] = cross;
    }
    write_json(a.out + ".json", report);
    {
        auto csv = open_output(a.out + ".csv");
        csv << prov.comment("# ");
        write_residual_csv(csv, series);
    }
    {
        std::vector<std::string> titles;
        const std::string model = to_string(lf.fit.model_type);
        for (std::size_t s = 0; s < series.streams(); ++s)
            titles.push_back(series.streams() > 1 ? model + " subprocess " + std::to_string(s + 1) : model);
        std::ostringstream svg;
        write_residual_svg(svg, series, titles);
        std::string text = svg.str();
        const auto pos = text.find('>');
        text.insert(pos == std::string::npos ? 0 : pos + 1, "\n" + prov.comment("<!-- ", " -->"));
        auto out = open_output(a.out + ".svg");
        out << text;
    }

    std::cout << std::left << std::setw(10) << "stream" << std::right << std::setw(8) << "n" << std::setw(12)
              << "Pearson t" << std::setw(10) << "p" << std::setw(10) << "KS D" << std::setw(10) << "p"
              << std::setw(12) << "99% band" << '\n';
    for (std::size_t s = 0; s < diags.size(); ++s) {
        const auto& d = diags[s];
        std::cout << std::left << std::setw(10) << (diags.size() > 1 ? "SP" + std::to_string(s + 1) : "all")
                  << std::right << std::setw(8) << d.n << std::setw(12) << fmt(d.pearson.statistic, 2) << std::setw(10)
                  << fmt(d.pearson.p_value, 3) << std::setw(10) << fmt(d.ks.statistic, 3) << std::setw(10)
                  << fmt(d.ks.p_value, 3) << std::setw(12) << (d.inside_99 ? "inside" : "crossed") << '\n';
    }
    return kExitOk;
}

struct SimulateArgs {
    std::string fit;
    std::string params;
    std::string catalogue;
    std::string out;
    std::string catalogue_out;
    double horizon = 0.0;
    std::uint64_t seed = 0;
    std::size_t cap = 1'000'000;
    bool allow_mismatch = false;
};

int cmd_simulate(const SimulateArgs& a) {
    if (a.fit.empty() == a.params.empty()) throw UsageError("give exactly one of --fit and --params");
    if (!(a.horizon > 0)) throw UsageError("--horizon must be positive");
    ModelParams model;
    Provenance prov{a.seed, {}};
    std::optional<LoadedFit> lf;
    if (!a.fit.empty()) {
        lf = load_fit_file(a.fit);
        model = lf->fit.params;
        prov.inputs.emplace_back("fit", lf->file_hash);
    } else {
        const std::string bytes = read_file(a.params);
        model = model_from_json(json::parse(bytes));
        prov.inputs.emplace_back("params", sha256_hex(bytes));
    }
    SimulationOptions so;
    so.cap = a.cap;
    auto rng = make_rng(a.seed, 0, 0);

    // With a catalogue the simulation continues its history over
    // [T, T + horizon); otherwise it starts empty on [0, horizon).
    std::vector<LabelledEvent> events;
    double t0 = 0.0;
    if (!a.catalogue.empty()) {
        const auto lc = load_catalogue_file(a.catalogue);
        if (lf) check_fit_matches(*lf, lc, a.allow_mismatch);
        prov.inputs.emplace_back("catalogue", lc.hash);
        t0 = lc.cat.horizon_t;
        if (const auto* p = std::get_if<MdfhpParams>(&model)) {
            const auto hist = label_events(lc.cat, split_by_magnitude(lc.cat, p->cuts));
            events = simulate_mdfhp(*p, hist, t0, t0 + a.horizon, rng, so);
        } else {
            for (const auto& e : simulate_etas(std::get<EtasParams>(model), lc.cat.events, t0, t0 + a.horizon, rng, so))
                events.push_back({e.t, e.magnitude, 0});
        }
    } else if (const auto* p = std::get_if<MdfhpParams>(&model)) {
        events = simulate_mdfhp(*p, {}, 0.0, a.horizon, rng, so);
    } else {
        for (const auto& e : simulate_etas(std::get<EtasParams>(model), {}, 0.0, a.horizon, rng, so))
            events.push_back({e.t, e.magnitude, 0});
    }

    {
        auto out = open_output(a.out);
        out << prov.comment("# ") << "t,mag,subprocess\n" << std::setprecision(12);
        for (const auto& e : events) out << e.t << ',' << e.magnitude << ',' << e.subprocess + 1 << '\n';
    }
    if (!a.catalogue_out.empty()) {
        if (t0 != 0.0) throw UsageError("--catalogue-out is only available without --catalogue");
        Catalogue cat;
        for (const auto& e : events) cat.events.push_back({e.t, e.magnitude});
        cat.m0 = std::visit([](const auto& p) { return p.m0; }, model);
        cat.horizon_t = a.horizon;
        cat.origin_utc = format_iso8601(0.0);
        cat.source_meta = {{"format", "simulated"}, {"seed", std::to_string(a.seed)}, {"tool_version", MDFHP_VERSION}};
        save_catalogue(cat, a.catalogue_out);
    }
    std::cout << events.size() << " events simulated\n";
    return kExitOk;
}

struct IgainArgs {
    std::string fit;
    std::string catalogue;
    std::string out;
    std::vector<double> classes;
    double window = 2.0;
    std::size_t replicates = 2000;
    std::uint64_t seed = 0;
    int threads = default_threads();
    bool allow_mismatch = false;
    bool quiet = false;
};

IgainOptions igain_options(double window, std::size_t replicates, std::uint64_t seed, int threads, bool quiet) {
    if (!(window > 0)) throw UsageError("--window must be positive");
    if (replicates < 2) throw UsageError("--replicates must be at least 2");
    IgainOptions io;
    io.window_days = window;
    io.replicates = replicates;
    io.seed = seed;
    io.threads = threads;
    io.jackknife_groups = std::min<std::size_t>(20, replicates);
    if (!quiet)
        io.progress = [](std::size_t done, std::size_t total) {
            if (done % 100 == 0 || done == total) std::cerr << "\rwindow " << done << "/" << total << std::flush;
            if (done == total) std::cerr << '\n';
        };
    return io;
}

int cmd_igain(const IgainArgs& a) {
    const auto lf = load_fit_file(a.fit);
    const auto lc = load_catalogue_file(a.catalogue);
    check_fit_matches(lf, lc, a.allow_mismatch);
    const auto classes = classes_from_edges(lc.cat.m0, a.classes);
    const auto report = igain(lf.fit.params, lc.cat, classes, igain_options(a.window, a.replicates, a.seed, a.threads, a.quiet));
    const Provenance prov{a.seed, {{"catalogue", lc.hash}, {"fit", lf.file_hash}}};
    json j = igain_to_json(report);
    j["provenance"] = prov.to_json();
    write_json(a.out + ".json", j);
    {
        auto csv = open_output(a.out + ".csv");
        csv << prov.comment("# ");
        write_igain_csv(csv, report);
    }
    print_igain(report);
    return kExitOk;
}

struct SweepArgs {
    std::string catalogue;
    std::vector<double> cuts;
    std::string out;
    int restarts = 10;
    std::uint64_t seed = 1;
    int threads = default_threads();
    bool etas = false;
    std::size_t igain_replicates = 0;
    std::vector<double> classes;
    double window = 2.0;
};

// Share of events in the smallest subprocess of a cut.
double smallest_share(const Catalogue& cat, const std::vector<double>& cuts) {
    const auto mem = split_by_magnitude(cat, cuts);
    std::size_t smallest = cat.size();
    for (const auto& m : mem) smallest = std::min(smallest, m.size());
    return static_cast<double>(smallest) / static_cast<double>(cat.size());
}

int cmd_sweep(const SweepArgs& a) {
    if (a.cuts.size() < 2) throw UsageError("--cuts needs at least two cut values");
    const auto lc = load_catalogue_file(a.catalogue);
    std::vector<MagnitudeClass> classes;
    if (a.igain_replicates > 0) classes = classes_from_edges(lc.cat.m0, a.classes);
    FitArgs fa;
    fa.restarts = a.restarts;
    fa.seed = a.seed;
    fa.threads = a.threads;
    const FitOptions fo = fit_options(fa);

    struct Row {
        std::string label;
        std::vector<double> cuts;
    };
    std::vector<Row> rows;
    if (a.etas) rows.push_back({"ETAS", {}});
    for (const double c : a.cuts) rows.push_back({"MDFHP" + fmt(c, 2), {c}});

    json results = json::array();
    std::optional<std::size_t> best;
    double best_aic = INFINITY;
    for (const auto& row : rows) {
        json r{{"model", row.label}};
        std::cerr << "fitting " << row.label << '\n';
        try {
            const ModelType type = row.cuts.empty() ? ModelType::etas : ModelType::mdfhp;
            if (type == ModelType::mdfhp) {
                r["cut"] = row.cuts.front();
                const double share = smallest_share(lc.cat, row.cuts);
                r["smallest_subprocess_share"] = share;
                r["below_20_percent"] = share < 0.2;
            }
            const FitResult f = fit(type, lc.cat, row.cuts, std::nullopt, fo);
            r["loglik"] = f.loglik;
            r["aic"] = f.aic;
            r["bic"] = f.bic;
            r["converged"] = f.converged;
            r["params"] = model_to_json(f.params);
            const auto diags = diagnose(transformed_times(f, lc.cat));
            r["residuals"] = diagnostics_to_json(diags);
            if (a.igain_replicates > 0) {
                const auto rep = igain(f.params, lc.cat, classes,
                                       igain_options(a.window, a.igain_replicates, a.seed, a.threads, true));
                r["igain"] = igain_to_json(rep);
            }
            if (type == ModelType::mdfhp && f.aic < best_aic) {
                best_aic = f.aic;
                best = results.size();
            }
        } catch (const std::exception& e) {
            r["error"] = e.what();
            std::cerr << "  " << row.label << " failed: " << e.what() << '\n';
        }
        results.push_back(r);
    }

    const Provenance prov{a.seed, {{"catalogue", lc.hash}}};
    json report{{"rows", results}, {"provenance", prov.to_json()}};
    if (best) report["best_mdfhp_by_aic"] = results[*best]["model"];
    write_json(a.out + ".json", report);

    auto csv = open_output(a.out + ".csv");
    csv << prov.comment("# ") << "model,smallest_share,below_20_percent,loglik,aic,bic,ks_p_sp1,pearson_p_sp1,ks_p_sp2,pearson_p_sp2";
    const std::size_t nk = classes.size();
    for (std::size_t k = 0; k < nk; ++k) csv << ",rho_T_" << k + 1;
    csv << ",error\n";

    std::cout << std::left << std::setw(12) << "model" << std::right << std::setw(10) << "share" << std::setw(11)
              << "AIC" << std::setw(11) << "BIC" << std::setw(10) << "KS p1" << std::setw(10) << "KS p2"
              << std::setw(10) << "r p1" << std::setw(10) << "r p2" << '\n';
    for (const auto& r : results) {
        auto num = [&](const char* key) { return r.contains(key) ? fmt(r[key].get<double>(), 3) : std::string(); };
        auto diag = [&](std::size_t s, const char* test) {
            if (!r.contains("residuals") || r["residuals"].size() <= s) return std::string();
            return fmt(r["residuals"][s][test]["p_value"].get<double>(), 3);
        };
        csv << r["model"].get<std::string>() << ',' << num("smallest_subprocess_share") << ','
            << (r.contains("below_20_percent") ? (r["below_20_percent"].get<bool>() ? "true" : "false") : "") << ','
            << num("loglik") << ',' << num("aic") << ',' << num("bic") << ',' << diag(0, "ks") << ','
            << diag(0, "pearson") << ',' << diag(1, "ks") << ',' << diag(1, "pearson");
        for (std::size_t k = 0; k < nk; ++k)
            csv << ',' << (r.contains("igain") ? fmt(r["igain"]["classes"][k]["rho_T"].get<double>(), 5) : "");
        std::string err = r.contains("error") ? r["error"].get<std::string>() : "";
        std::replace(err.begin(), err.end(), ',', ';');
        csv << ',' << err << '\n';

        std::cout << std::left << std::setw(12) << r["model"].get<std::string>() << std::right << std::setw(10)
                  << num("smallest_subprocess_share") << std::setw(11) << (r.contains("aic") ? fmt(r["aic"].get<double>(), 1) : "failed")
                  << std::setw(11) << (r.contains("bic") ? fmt(r["bic"].get<double>(), 1) : "") << std::setw(10)
                  << diag(0, "ks") << std::setw(10) << diag(1, "ks") << std::setw(10) << diag(0, "pearson")
                  << std::setw(10) << diag(1, "pearson");
        if (r.value("below_20_percent", false)) std::cout << "  smaller subprocess < 20% of events";
        std::cout << '\n';
    }
    if (best) std::cout << "lowest AIC: " << results[*best]["model"].get<std::string>() << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multidimensional fractional Hawkes process toolkit"};
    app.set_version_flag("--version", MDFHP_VERSION);
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON run configuration; command-line flags take precedence");
    app.require_subcommand(1);
    app.allow_config_extras(CLI::config_extras_mode::error);

    FetchArgs fetch_args;
    auto* fetch_cmd = app.add_subcommand("fetch", "download a USGS catalogue");
    fetch_args.q.add_to(fetch_cmd);
    fetch_cmd->add_option("--out", fetch_args.out, "catalogue JSON")->required();
    fetch_cmd->add_option("--raw-out", fetch_args.raw_out, "also keep the raw CSV");
    fetch_cmd->add_option("--endpoint", fetch_args.endpoint, "FDSN event service base URL");
    fetch_cmd->add_option("--timeout", fetch_args.timeout, "per-request timeout in seconds");

    IngestArgs ingest_args;
    auto* ingest_cmd = app.add_subcommand("ingest", "convert a USGS CSV export to a catalogue");
    ingest_args.q.add_to(ingest_cmd);
    ingest_cmd->add_option("--csv", ingest_args.csv, "USGS event CSV")->required();
    ingest_cmd->add_option("--out", ingest_args.out, "catalogue JSON")->required();
    ingest_cmd->add_option("--horizon", ingest_args.horizon, "query-end or last-event");

    FitArgs fit_args;
    auto* fit_cmd = app.add_subcommand("fit", "maximum likelihood fit");
    fit_cmd->add_option("--catalogue", fit_args.catalogue)->required();
    fit_cmd->add_option("--model", fit_args.model, "mdfhp or etas")->required();
    fit_cmd->add_option("--cuts", fit_args.cuts, "subprocess cut magnitudes")->delimiter(',');
    fit_cmd->add_option("--init", fit_args.init, "starting parameters (model JSON)");
    fit_cmd->add_option("--out", fit_args.out, "fit JSON")->required();
    fit_cmd->add_option("--restarts", fit_args.restarts, "perturbed restarts per row");
    fit_cmd->add_option("--seed", fit_args.seed);
    fit_cmd->add_option("--threads", fit_args.threads, "worker threads (default: MDFHP_THREADS or 1)");
    fit_cmd->add_option("--level", fit_args.level, "confidence level of the intervals");
    fit_cmd->add_flag("--no-polish", fit_args.no_polish, "skip the quasi-Newton polish");

    ResidualArgs res_args;
    auto* res_cmd = app.add_subcommand("residuals", "transformed-time residual analysis");
    res_cmd->add_option("--fit", res_args.fit)->required();
    res_cmd->add_option("--catalogue", res_args.catalogue)->required();
    res_cmd->add_option("--out", res_args.out, "output prefix for .json, .csv and .svg")->required();
    res_cmd->add_option("--alternative", res_args.alternative, "KS alternative: two-sided, greater or less");
    res_cmd->add_flag("--allow-hash-mismatch", res_args.allow_mismatch);

    SimulateArgs sim_args;
    auto* sim_cmd = app.add_subcommand("simulate", "simulate from fitted or given parameters");
    sim_cmd->add_option("--fit", sim_args.fit);
    sim_cmd->add_option("--params", sim_args.params, "model parameter JSON");
    sim_cmd->add_option("--catalogue", sim_args.catalogue, "history to continue from");
    sim_cmd->add_option("--horizon", sim_args.horizon, "days to simulate")->required();
    sim_cmd->add_option("--seed", sim_args.seed);
    sim_cmd->add_option("--cap", sim_args.cap, "maximum number of events");
    sim_cmd->add_option("--out", sim_args.out, "CSV t,mag,subprocess")->required();
    sim_cmd->add_option("--catalogue-out", sim_args.catalogue_out, "also save as a catalogue");
    sim_cmd->add_flag("--allow-hash-mismatch", sim_args.allow_mismatch);

    IgainArgs ig_args;
    auto* ig_cmd = app.add_subcommand("igain", "information gain against the empirical Poisson reference");
    ig_cmd->add_option("--fit", ig_args.fit)->required();
    ig_cmd->add_option("--catalogue", ig_args.catalogue)->required();
    ig_cmd->add_option("--classes", ig_args.classes, "inner class edges, e.g. 5.5,6.5")->delimiter(',')->required();
    ig_cmd->add_option("--window", ig_args.window, "window length in days");
    ig_cmd->add_option("--replicates", ig_args.replicates, "simulations per window");
    ig_cmd->add_option("--seed", ig_args.seed);
    ig_cmd->add_option("--threads", ig_args.threads);
    ig_cmd->add_option("--out", ig_args.out, "output prefix for .json and .csv")->required();
    ig_cmd->add_flag("--allow-hash-mismatch", ig_args.allow_mismatch);
    ig_cmd->add_flag("--quiet", ig_args.quiet, "no progress output");

    SweepArgs sw_args;
    auto* sw_cmd = app.add_subcommand("sweep", "compare MDFHP fits over subprocess cut magnitudes");
    sw_cmd->add_option("--catalogue", sw_args.catalogue)->required();
    sw_cmd->add_option("--cuts", sw_args.cuts, "cut magnitudes, one two-subprocess model each")->delimiter(',')->required();
    sw_cmd->add_option("--out", sw_args.out, "output prefix for .json and .csv")->required();
    sw_cmd->add_option("--restarts", sw_args.restarts);
    sw_cmd->add_option("--seed", sw_args.seed);
    sw_cmd->add_option("--threads", sw_args.threads);
    sw_cmd->add_flag("--etas", sw_args.etas, "include an ETAS reference row");
    sw_cmd->add_option("--igain-replicates", sw_args.igain_replicates, "replicates for the information gain (0 skips it)");
    sw_cmd->add_option("--classes", sw_args.classes, "inner class edges for the information gain")->delimiter(',');
    sw_cmd->add_option("--window", sw_args.window);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*fetch_cmd) return cmd_fetch(fetch_args);
        if (*ingest_cmd) return cmd_ingest(ingest_args);
        if (*fit_cmd) return cmd_fit(fit_args);
        if (*res_cmd) return cmd_residuals(res_args);
        if (*sim_cmd) return cmd_simulate(sim_args);
        if (*ig_cmd) return cmd_igain(ig_args);
        if (*sw_cmd) return cmd_sweep(sw_args);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const FetchError& e) {
        std::cerr << "network error: " << e.what() << '\n';
        return kExitIo;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kExitIo;
    } catch (const EmptyCatalogueError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const json::exception& e) {
        std::cerr << "malformed input: " << e.what() << '\n';
        return kExitIo;
    } catch (const HashMismatchError& e) {
        std::cerr << "consistency error: " << e.what() << '\n';
        return kExitConsistency;
    } catch (const ConsistencyError& e) {
        std::cerr << "consistency error: " << e.what() << '\n';
        return kExitConsistency;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kExitUsage;
}
