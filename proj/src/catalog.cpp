#include "mdfhp/catalog.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace mdfhp {

using nlohmann::json;

void validate(const Region& r) {
    const bool ok = r.lon_min <= r.lon_max && r.lat_min <= r.lat_max && r.lon_min >= -180.0 &&
                    r.lon_max <= 180.0 && r.lat_min >= -90.0 && r.lat_max <= 90.0;
    if (!ok) throw std::invalid_argument("region bounds must satisfy min <= max within [-180,180] x [-90,90]");
}

void validate(const Catalogue& cat) {
    for (std::size_t i = 0; i < cat.events.size(); ++i) {
        const Event& e = cat.events[i];
        if (!(e.t >= 0.0)) throw std::invalid_argument("event " + std::to_string(i) + " has negative time");
        if (i > 0 && !(e.t > cat.events[i - 1].t))
            throw std::invalid_argument("event times are not strictly increasing at index " + std::to_string(i));
        if (e.magnitude < cat.m0 || e.magnitude > kMaxMagnitude)
            throw std::invalid_argument("event " + std::to_string(i) + " magnitude outside [m0, 10]");
    }
    if (!cat.events.empty() && cat.horizon_t < cat.events.back().t)
        throw std::invalid_argument("horizon precedes the last event");
}

// ---------------------------------------------------------------------------
// Time

namespace {

bool parse_int(std::string_view s, int& out) {
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace

double parse_iso8601(std::string_view text) {
    auto fail = [&]() -> double {
        throw std::invalid_argument("malformed ISO-8601 timestamp '" + std::string(text) + "'");
    };
    std::string_view s = text;
    if (!s.empty() && (s.back() == 'Z' || s.back() == 'z')) s.remove_suffix(1);
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') return fail();
    int y = 0, mo = 0, d = 0;
    if (!parse_int(s.substr(0, 4), y) || !parse_int(s.substr(5, 2), mo) || !parse_int(s.substr(8, 2), d)) return fail();
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return fail();
    double seconds = static_cast<double>(sys_days{ymd}.time_since_epoch().count()) * kSecondsPerDay;
    if (s.size() == 10) return seconds;
    if ((s[10] != 'T' && s[10] != ' ') || s.size() < 19 || s[13] != ':' || s[16] != ':') return fail();
    int hh = 0, mm = 0;
    double ss = 0.0;
    if (!parse_int(s.substr(11, 2), hh) || !parse_int(s.substr(14, 2), mm) || !parse_double(s.substr(17), ss))
        return fail();
    if (hh > 23 || mm > 59 || ss < 0.0 || ss >= 61.0) return fail();
    return seconds + hh * 3600.0 + mm * 60.0 + ss;
}

std::string format_iso8601(double epoch_seconds) {
    using namespace std::chrono;
    const double whole_days = std::floor(epoch_seconds / kSecondsPerDay);
    long long ms = std::llround((epoch_seconds - whole_days * kSecondsPerDay) * 1000.0);
    long long day_count = static_cast<long long>(whole_days);
    if (ms >= 86400000LL) {
        ms -= 86400000LL;
        ++day_count;
    }
    const year_month_day ymd{sys_days{days{day_count}}};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld.%03lldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), ms / 3600000LL,
                  (ms / 60000LL) % 60, (ms / 1000LL) % 60, ms % 1000);
    return buf;
}

// ---------------------------------------------------------------------------
// CSV

std::vector<CsvRecord> parse_csv(std::string_view bytes) {
    std::vector<CsvRecord> records;
    CsvRecord current{1, {}};
    std::string field;
    std::size_t line = 1;
    bool in_quotes = false;
    bool field_started = false;
    bool record_has_content = false;

    auto end_field = [&] {
        current.fields.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        if (record_has_content || !current.fields.empty()) {
            end_field();
            records.push_back(std::move(current));
        }
        current = CsvRecord{line + 1, {}};
        record_has_content = false;
        field.clear();
        field_started = false;
    };

    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const char ch = bytes[i];
        if (in_quotes) {
            if (ch == '"') {
                if (i + 1 < bytes.size() && bytes[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (ch == '\n') ++line;
                field.push_back(ch);
            }
            continue;
        }
        switch (ch) {
            case '"':
                if (field_started && !field.empty()) throw ParseError(line, "stray quote inside unquoted field");
                in_quotes = true;
                field_started = true;
                record_has_content = true;
                break;
            case ',':
                end_field();
                record_has_content = true;
                break;
            case '\r':
                break;
            case '\n':
                end_record();
                ++line;
                break;
            default:
                field.push_back(ch);
                field_started = true;
                record_has_content = true;
        }
    }
    if (in_quotes) throw ParseError(current.line, "unterminated quoted field");
    if (record_has_content || !current.fields.empty()) {
        end_field();
        records.push_back(std::move(current));
    }
    return records;
}

// ---------------------------------------------------------------------------
// USGS ingestion

Catalogue parse_usgs_csv(std::string_view bytes, const IngestOptions& opts) {
    validate(opts.region);
    const double t_start = opts.t_start.empty() ? -INFINITY : parse_iso8601(opts.t_start);
    const double t_end = opts.t_end.empty() ? INFINITY : parse_iso8601(opts.t_end);
    if (!(t_start <= t_end)) throw std::invalid_argument("ingestion window start is after its end");

    const auto records = parse_csv(bytes);
    if (records.empty()) throw ParseError(1, "missing header row");
    const auto& header = records.front().fields;
    auto column = [&](const char* name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ParseError(records.front().line, std::string("header lacks column '") + name + "'");
    };
    const std::size_t c_time = column("time");
    const std::size_t c_lat = column("latitude");
    const std::size_t c_lon = column("longitude");
    const std::size_t c_mag = column("mag");

    struct Raw {
        double epoch;
        double mag;
        std::size_t order;
    };
    std::vector<Raw> kept;
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.fields.size() != header.size())
            throw ParseError(rec.line, "expected " + std::to_string(header.size()) + " fields, found " +
                                           std::to_string(rec.fields.size()));
        double epoch = 0.0, lat = 0.0, lon = 0.0, mag = 0.0;
        try {
            epoch = parse_iso8601(rec.fields[c_time]);
        } catch (const std::invalid_argument& e) {
            throw ParseError(rec.line, e.what());
        }
        if (!parse_double(rec.fields[c_lat], lat) || !parse_double(rec.fields[c_lon], lon))
            throw ParseError(rec.line, "non-numeric latitude/longitude");
        if (rec.fields[c_mag].empty()) continue;
        if (!parse_double(rec.fields[c_mag], mag)) throw ParseError(rec.line, "non-numeric magnitude");

        if (!opts.region.contains(lon, lat)) continue;
        if (mag < opts.m0 - 1e-9 || mag > kMaxMagnitude) continue;
        if (epoch < t_start || epoch > t_end) continue;
        kept.push_back({epoch, mag, r});
    }
    if (kept.empty()) throw EmptyCatalogueError("no events survive the region/magnitude/time filters");

    std::stable_sort(kept.begin(), kept.end(), [](const Raw& a, const Raw& b) { return a.epoch < b.epoch; });

    Catalogue cat;
    cat.m0 = opts.m0;
    cat.region = opts.region;
    const double origin = kept.front().epoch;
    cat.origin_utc = format_iso8601(origin);
    cat.events.reserve(kept.size());
    std::size_t ties = 0;
    for (const Raw& raw : kept) {
        double t = (raw.epoch - origin) / kSecondsPerDay;
        if (!cat.events.empty() && t <= cat.events.back().t) {
            t = cat.events.back().t + kTieBreakDays;
            ++ties;
        }
        cat.events.push_back({t, std::max(raw.mag, opts.m0)});
    }
    if (opts.horizon == HorizonMode::query_end && std::isfinite(t_end)) {
        cat.horizon_t = std::max((t_end - origin) / kSecondsPerDay, cat.events.back().t);
    } else {
        cat.horizon_t = cat.events.back().t;
    }
    cat.source_meta["format"] = "usgs-csv";
    cat.source_meta["window_start"] = opts.t_start;
    cat.source_meta["window_end"] = opts.t_end;
    cat.source_meta["horizon_mode"] = opts.horizon == HorizonMode::query_end ? "query_end" : "last_event";
    cat.source_meta["ties_separated"] = std::to_string(ties);
    return cat;
}

Catalogue parse_usgs_csv(std::istream& in, const IngestOptions& opts) {
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_usgs_csv(std::string_view(bytes), opts);
}

// ---------------------------------------------------------------------------
// Magnitude discretisation

std::vector<MagnitudeInterval> magnitude_intervals(double m0, const std::vector<double>& cuts) {
    double prev = m0;
    for (double c : cuts) {
        if (!(c > prev) || !(c < kMaxMagnitude))
            throw std::invalid_argument("magnitude cuts must be strictly ascending inside (m0, 10)");
        prev = c;
    }
    std::vector<MagnitudeInterval> out;
    const std::size_t nb = cuts.size() + 1;
    for (std::size_t i = 0; i < nb; ++i) {
        // subprocess i covers the (nb - 1 - i)-th interval counted from m0
        const std::size_t k = nb - 1 - i;
        const double lo = k == 0 ? m0 : cuts[k - 1];
        const double hi = k == nb - 1 ? kMaxMagnitude : cuts[k];
        out.push_back({lo, hi, i == 0});
    }
    return out;
}

int subprocess_of(double magnitude, double m0, const std::vector<double>& cuts) {
    if (magnitude < m0 || magnitude > kMaxMagnitude) return -1;
    const auto above = std::upper_bound(cuts.begin(), cuts.end(), magnitude) - cuts.begin();
    return static_cast<int>(cuts.size()) - static_cast<int>(above);
}

Membership split_by_magnitude(const Catalogue& cat, const std::vector<double>& cuts) {
    magnitude_intervals(cat.m0, cuts);  // validates
    Membership sets(cuts.size() + 1);
    for (std::size_t i = 0; i < cat.events.size(); ++i) {
        const int j = subprocess_of(cat.events[i].magnitude, cat.m0, cuts);
        if (j < 0) throw std::invalid_argument("event magnitude outside [m0, 10]");
        sets[static_cast<std::size_t>(j)].push_back(i);
    }
    return sets;
}

std::vector<int> labels_from_membership(const Membership& membership, std::size_t n_events) {
    std::vector<int> labels(n_events, -1);
    for (std::size_t j = 0; j < membership.size(); ++j)
        for (std::size_t idx : membership[j]) labels.at(idx) = static_cast<int>(j);
    return labels;
}

// ---------------------------------------------------------------------------
// Persistence

json catalogue_to_json(const Catalogue& cat) {
    json events = json::array();
    for (const Event& e : cat.events) events.push_back({{"t", e.t}, {"mag", e.magnitude}});
    return json{{"origin_utc", cat.origin_utc},
                {"m0", cat.m0},
                {"horizon_T", cat.horizon_t},
                {"region",
                 {{"lon_min", cat.region.lon_min},
                  {"lon_max", cat.region.lon_max},
                  {"lat_min", cat.region.lat_min},
                  {"lat_max", cat.region.lat_max}}},
                {"source_meta", cat.source_meta},
                {"events", events}};
}

Catalogue catalogue_from_json(const json& j) {
    Catalogue cat;
    cat.origin_utc = j.at("origin_utc").get<std::string>();
    cat.m0 = j.at("m0").get<double>();
    cat.horizon_t = j.at("horizon_T").get<double>();
    const json& r = j.at("region");
    cat.region = {r.at("lon_min").get<double>(), r.at("lon_max").get<double>(), r.at("lat_min").get<double>(),
                  r.at("lat_max").get<double>()};
    if (j.contains("source_meta")) cat.source_meta = j.at("source_meta").get<std::map<std::string, std::string>>();
    for (const json& e : j.at("events")) cat.events.push_back({e.at("t").get<double>(), e.at("mag").get<double>()});
    validate(cat);
    return cat;
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

std::string content_hash(const Catalogue& cat) {
    json j = catalogue_to_json(cat);
    j.erase("source_meta");
    return sha256_hex(j.dump());
}

std::string save_catalogue(const Catalogue& cat, const std::string& path) {
    json j = catalogue_to_json(cat);
    const std::string hash = content_hash(cat);
    j["sha256"] = hash;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << j.dump(1) << '\n';
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
    return hash;
}

Catalogue load_catalogue(const std::string& path, std::string* hash) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open catalogue file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("catalogue file '" + path + "' is not valid JSON: " + e.what());
    }
    Catalogue cat = catalogue_from_json(j);
    const std::string actual = content_hash(cat);
    if (j.contains("sha256") && j["sha256"].get<std::string>() != actual)
        throw HashMismatchError("catalogue '" + path + "' content does not match its stored hash");
    if (hash) *hash = actual;
    return cat;
}

// ---------------------------------------------------------------------------
// Study regions

UsgsQuery japan_query() {
    UsgsQuery q;
    q.region = {128.0, 149.0, 30.0, 47.0};
    q.min_magnitude = 4.75;
    q.start = "1993-07-12T14:27:20";
    q.end = "2002-09-15T08:39:32.999";
    return q;
}

UsgsQuery middle_america_query() {
    UsgsQuery q;
    q.region = {-106.0, -95.0, 15.0, 21.0};
    q.min_magnitude = 4.0;
    q.start = "1998-01-13T08:30:36";
    q.end = "2014-06-19T00:08:30.999";
    return q;
}

IngestOptions ingest_options_for(const UsgsQuery& query) {
    IngestOptions opts;
    opts.m0 = query.min_magnitude;
    opts.region = query.region;
    opts.t_start = query.start;
    opts.t_end = query.end;
    return opts;
}

}  // namespace mdfhp
