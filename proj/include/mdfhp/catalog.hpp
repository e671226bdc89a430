#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mdfhp {

inline constexpr double kMaxMagnitude = 10.0;
// Separation applied to events that share a timestamp (days).
inline constexpr double kTieBreakDays = 1e-7;

struct Event {
    double t;          // days since the first retained event
    double magnitude;
};

// Longitude/latitude rectangle in degrees, inclusive on all sides.
struct Region {
    double lon_min = -180.0;
    double lon_max = 180.0;
    double lat_min = -90.0;
    double lat_max = 90.0;

    bool contains(double lon, double lat) const {
        return lon >= lon_min && lon <= lon_max && lat >= lat_min && lat <= lat_max;
    }
};

// Throws std::invalid_argument when min > max or a bound is out of range.
void validate(const Region& region);

struct Catalogue {
    std::vector<Event> events;  // strictly increasing t
    double m0 = 0.0;
    double horizon_t = 0.0;     // observation window end, days
    std::string origin_utc;     // ISO-8601 time of t = 0
    Region region;
    std::map<std::string, std::string> source_meta;

    std::size_t size() const { return events.size(); }
    bool empty() const { return events.empty(); }
};

// Throws std::invalid_argument describing the first violated invariant.
void validate(const Catalogue& cat);

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class EmptyCatalogueError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Time handling

// Seconds since 1970-01-01T00:00:00Z for an ISO-8601 UTC timestamp such as
// "2002-09-15T08:39:32.120Z", "2002-09-15 08:39:32" or "2002-09-15".
// Throws std::invalid_argument on malformed input.
double parse_iso8601(std::string_view text);

// Inverse of parse_iso8601 with millisecond resolution ("...T08:39:32.120Z").
std::string format_iso8601(double epoch_seconds);

inline constexpr double kSecondsPerDay = 86400.0;

// ---------------------------------------------------------------------------
// USGS CSV ingestion

enum class HorizonMode {
    query_end,   // horizon = window end - first event
    last_event,  // horizon = time of the last retained event
};

struct IngestOptions {
    double m0 = 0.0;
    Region region;
    std::string t_start;  // ISO-8601, inclusive
    std::string t_end;    // ISO-8601, inclusive
    HorizonMode horizon = HorizonMode::query_end;
};

// Parses a USGS event-search CSV (header with at least time, latitude,
// longitude, mag), filters by region, m0 <= mag <= 10 and time window, sorts
// by time, separates ties and rebases times to days since the first retained
// event. Rows with an empty mag are dropped. Throws ParseError on malformed
// rows and EmptyCatalogueError when nothing survives the filters.
Catalogue parse_usgs_csv(std::istream& in, const IngestOptions& opts);
Catalogue parse_usgs_csv(std::string_view bytes, const IngestOptions& opts);

// RFC-4180 record splitter exposed for tests. Each record carries the
// 1-based line number on which it starts.
struct CsvRecord {
    std::size_t line;
    std::vector<std::string> fields;
};
std::vector<CsvRecord> parse_csv(std::string_view bytes);

// ---------------------------------------------------------------------------
// Magnitude discretisation

// Index sets per subprocess. Subprocess 0 holds the highest magnitude
// interval [cuts.back(), 10] and the last subprocess the lowest [m0, cuts[0]).
using Membership = std::vector<std::vector<std::size_t>>;

struct MagnitudeInterval {
    double lo;
    double hi;
    bool closed_above;  // only the top interval includes its upper end
};

// Throws std::invalid_argument unless m0 < cuts[0] < ... < cuts.back() < 10.
std::vector<MagnitudeInterval> magnitude_intervals(double m0, const std::vector<double>& cuts);

// Subprocess index of a magnitude, or -1 when outside [m0, 10].
int subprocess_of(double magnitude, double m0, const std::vector<double>& cuts);

Membership split_by_magnitude(const Catalogue& cat, const std::vector<double>& cuts);

// Per-event subprocess labels derived from a membership.
std::vector<int> labels_from_membership(const Membership& membership, std::size_t n_events);

// ---------------------------------------------------------------------------
// Persistence

nlohmann::json catalogue_to_json(const Catalogue& cat);
Catalogue catalogue_from_json(const nlohmann::json& j);

std::string sha256_hex(std::string_view data);

// SHA-256 (hex) of the canonical JSON serialisation of the catalogue.
std::string content_hash(const Catalogue& cat);

// Writes {catalogue..., "sha256": hash}. Returns the hash.
std::string save_catalogue(const Catalogue& cat, const std::string& path);

class HashMismatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Loads a catalogue file and verifies the stored hash (HashMismatchError).
Catalogue load_catalogue(const std::string& path, std::string* hash = nullptr);

// ---------------------------------------------------------------------------
// USGS FDSN client

struct UsgsQuery {
    Region region;
    double min_magnitude = 0.0;
    std::string start;  // ISO-8601
    std::string end;    // ISO-8601
};

inline constexpr const char* kUsgsEndpoint = "https://earthquake.usgs.gov/fdsnws/event/1/";

class FetchError : public std::runtime_error {
public:
    enum class Kind { transport, http_status, pagination };
    FetchError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct FetchOptions {
    std::size_t page_size = 20000;  // service cap per request
    int timeout_seconds = 60;
};

// Queries the count endpoint, then downloads CSV pages ordered by time and
// concatenates them under a single header. Throws FetchError.
std::string fetch_usgs(const UsgsQuery& query, const std::string& endpoint_url = kUsgsEndpoint,
                       const FetchOptions& opts = {});

// Queries for the Japan and Middle America Trench study regions.
UsgsQuery japan_query();
UsgsQuery middle_america_query();

IngestOptions ingest_options_for(const UsgsQuery& query);

}  // namespace mdfhp
