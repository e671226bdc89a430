#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "mdfhp/catalog.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

using namespace mdfhp;

namespace {

const char* kHeader =
    "time,latitude,longitude,depth,mag,magType,nst,gap,dmin,rms,net,id,updated,place,type,"
    "horizontalError,depthError,magError,magNst,status,locationSource,magSource\n";

std::string row(const std::string& time, double lat, double lon, double mag, const std::string& place = "\"Japan\"") {
    std::ostringstream out;
    out << time << ',' << lat << ',' << lon << ",10," << mag << ",mb,,,,,us,us1," << time << ',' << place
        << ",earthquake,,,,,reviewed,us,us\n";
    return out.str();
}

IngestOptions japan_like() {
    IngestOptions opts;
    opts.m0 = 4.75;
    opts.region = {128.0, 149.0, 30.0, 47.0};
    opts.t_start = "1993-01-01";
    opts.t_end = "1994-01-01";
    return opts;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("mdfhp_test_" + name)).string();
}

}  // namespace

TEST(Iso8601, ParseAndFormat) {
    EXPECT_DOUBLE_EQ(parse_iso8601("1970-01-01T00:00:00Z"), 0.0);
    EXPECT_DOUBLE_EQ(parse_iso8601("1970-01-02"), 86400.0);
    EXPECT_DOUBLE_EQ(parse_iso8601("2000-03-01T00:00:00.500Z") - parse_iso8601("2000-02-28T00:00:00Z"),
                     2.0 * 86400.0 + 0.5);
    EXPECT_EQ(format_iso8601(parse_iso8601("1993-07-12T14:27:20.520Z")), "1993-07-12T14:27:20.520Z");
    EXPECT_THROW(parse_iso8601("1993-13-12T14:27:20Z"), std::invalid_argument);
    EXPECT_THROW(parse_iso8601("yesterday"), std::invalid_argument);
    EXPECT_THROW(parse_iso8601("1993-07-12T14-27-20"), std::invalid_argument);
}

TEST(Csv, QuotedFieldsAndLineNumbers) {
    const auto recs = parse_csv("a,b,c\n1,\"x, y\",\"he said \"\"hi\"\"\"\r\n2,\"multi\nline\",3\n\n4,5,6");
    ASSERT_EQ(recs.size(), 4u);
    EXPECT_EQ(recs[1].fields[1], "x, y");
    EXPECT_EQ(recs[1].fields[2], "he said \"hi\"");
    EXPECT_EQ(recs[2].fields[1], "multi\nline");
    EXPECT_EQ(recs[2].line, 3u);
    EXPECT_EQ(recs[3].line, 6u);
    EXPECT_THROW(parse_csv("a,b\n1,\"open\n"), ParseError);
}

TEST(ParseUsgs, FiltersRegionMagnitudeAndRebasesTime) {
    std::string csv = kHeader;
    csv += row("1993-07-12T16:00:00.000Z", 40.0, 140.0, 4.9, "\"100 km E of Somewhere, Japan\"");
    csv += row("1993-07-12T14:27:20.000Z", 35.0, 135.0, 5.1);
    csv += row("1993-07-13T14:27:20.000Z", 35.0, 135.0, 4.5);  // below m0
    csv += row("1993-07-13T18:00:00.000Z", 20.0, 135.0, 6.0);  // outside region
    const Catalogue cat = parse_usgs_csv(std::string_view(csv), japan_like());
    ASSERT_EQ(cat.size(), 2u);
    EXPECT_EQ(cat.events[0].t, 0.0);
    EXPECT_DOUBLE_EQ(cat.events[0].magnitude, 5.1);
    EXPECT_NEAR(cat.events[1].t, (16.0 * 3600.0 - (14.0 * 3600.0 + 27.0 * 60.0 + 20.0)) / 86400.0, 1e-12);
    EXPECT_EQ(cat.origin_utc, "1993-07-12T14:27:20.000Z");
    EXPECT_NEAR(cat.horizon_t, (parse_iso8601("1994-01-01") - parse_iso8601("1993-07-12T14:27:20Z")) / 86400.0, 1e-9);
    validate(cat);
}

TEST(ParseUsgs, HorizonModeLastEvent) {
    std::string csv = kHeader;
    csv += row("1993-07-12T00:00:00Z", 35.0, 135.0, 5.0);
    csv += row("1993-07-14T00:00:00Z", 35.0, 135.0, 5.0);
    IngestOptions opts = japan_like();
    opts.horizon = HorizonMode::last_event;
    EXPECT_DOUBLE_EQ(parse_usgs_csv(std::string_view(csv), opts).horizon_t, 2.0);
}

TEST(ParseUsgs, SeparatesTiesInArrivalOrder) {
    std::string csv = kHeader;
    csv += row("1993-07-12T00:00:00Z", 35.0, 135.0, 5.0);
    csv += row("1993-07-12T00:00:00Z", 35.0, 135.0, 6.0);
    csv += row("1993-07-12T00:00:00Z", 35.0, 135.0, 4.8);
    const Catalogue cat = parse_usgs_csv(std::string_view(csv), japan_like());
    ASSERT_EQ(cat.size(), 3u);
    EXPECT_EQ(cat.events[0].magnitude, 5.0);
    EXPECT_EQ(cat.events[1].magnitude, 6.0);
    EXPECT_DOUBLE_EQ(cat.events[1].t, kTieBreakDays);
    EXPECT_DOUBLE_EQ(cat.events[2].t, 2.0 * kTieBreakDays);
}

TEST(ParseUsgs, ErrorsCarryLineNumbers) {
    std::string csv = kHeader;
    csv += row("1993-07-12T00:00:00Z", 35.0, 135.0, 5.0);
    csv += "1993-07-13T00:00:00Z,35,135,10,abc,mb,,,,,us,us1,x,\"p\",earthquake,,,,,reviewed,us,us\n";
    try {
        parse_usgs_csv(std::string_view(csv), japan_like());
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    std::string short_row = std::string(kHeader) + "1993-07-13T00:00:00Z,35,135\n";
    EXPECT_THROW(parse_usgs_csv(std::string_view(short_row), japan_like()), ParseError);
    EXPECT_THROW(parse_usgs_csv(std::string_view("time,latitude,mag\n"), japan_like()), ParseError);
}

TEST(ParseUsgs, EmptyResultIsAnError) {
    EXPECT_THROW(parse_usgs_csv(std::string_view(kHeader), japan_like()), EmptyCatalogueError);
}

TEST(SplitByMagnitude, HighestIntervalIsSubprocessZero) {
    Catalogue cat;
    cat.m0 = 4.75;
    cat.events = {{0.0, 4.75}, {1.0, 5.5}, {2.0, 5.49}, {3.0, 10.0}, {4.0, 7.2}};
    cat.horizon_t = 5.0;
    const auto m = split_by_magnitude(cat, {5.5});
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m[0], (std::vector<std::size_t>{1, 3, 4}));
    EXPECT_EQ(m[1], (std::vector<std::size_t>{0, 2}));

    const auto single = split_by_magnitude(cat, {});
    ASSERT_EQ(single.size(), 1u);
    EXPECT_EQ(single[0].size(), 5u);

    EXPECT_THROW(split_by_magnitude(cat, {6.0, 5.5}), std::invalid_argument);
    EXPECT_THROW(split_by_magnitude(cat, {4.0}), std::invalid_argument);
    EXPECT_THROW(split_by_magnitude(cat, {10.0}), std::invalid_argument);

    const auto iv = magnitude_intervals(4.75, {5.5});
    EXPECT_EQ(iv[0].lo, 5.5);
    EXPECT_EQ(iv[0].hi, 10.0);
    EXPECT_TRUE(iv[0].closed_above);
    EXPECT_EQ(iv[1].lo, 4.75);
    EXPECT_EQ(iv[1].hi, 5.5);
    EXPECT_FALSE(iv[1].closed_above);
}

TEST(SplitByMagnitude, PartitionProperty) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
        Catalogue cat;
        cat.m0 = 3.0 + unit(rng);
        const int n = 1 + static_cast<int>(unit(rng) * 300);
        for (int i = 0; i < n; ++i) {
            const double m = unit(rng) < 0.05 ? cat.m0 : cat.m0 + (10.0 - cat.m0) * unit(rng);
            cat.events.push_back({static_cast<double>(i), m});
        }
        std::set<double> cut_set;
        const int ncut = static_cast<int>(unit(rng) * 4);
        while (static_cast<int>(cut_set.size()) < ncut) cut_set.insert(cat.m0 + 0.01 + (9.98 - cat.m0) * unit(rng));
        const std::vector<double> cuts(cut_set.begin(), cut_set.end());
        // Some events exactly on cuts.
        for (std::size_t k = 0; k < cuts.size() && k < cat.events.size(); ++k) cat.events[k].magnitude = cuts[k];

        const auto m = split_by_magnitude(cat, cuts);
        ASSERT_EQ(m.size(), cuts.size() + 1);
        std::vector<int> seen(cat.events.size(), 0);
        const auto iv = magnitude_intervals(cat.m0, cuts);
        for (std::size_t j = 0; j < m.size(); ++j) {
            for (std::size_t idx : m[j]) {
                ++seen[idx];
                const double mag = cat.events[idx].magnitude;
                EXPECT_GE(mag, iv[j].lo);
                if (iv[j].closed_above) {
                    EXPECT_LE(mag, iv[j].hi);
                } else {
                    EXPECT_LT(mag, iv[j].hi);
                }
            }
        }
        for (int s : seen) EXPECT_EQ(s, 1);
    }
}

TEST(Persistence, JsonRoundTripIsBitExact) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Catalogue cat;
    cat.m0 = 4.0;
    cat.origin_utc = "1998-01-13T08:30:36.000Z";
    cat.region = {-106.0, -95.0, 15.0, 21.0};
    double t = 0.0;
    for (int i = 0; i < 500; ++i) {
        cat.events.push_back({t, 4.0 + 3.0 * unit(rng)});
        t += -std::log(unit(rng)) * 1.37 + 1e-9;
    }
    cat.horizon_t = t;
    const std::string path = temp_path("roundtrip.json");
    const std::string hash = save_catalogue(cat, path);
    std::string loaded_hash;
    const Catalogue back = load_catalogue(path, &loaded_hash);
    EXPECT_EQ(hash, loaded_hash);
    ASSERT_EQ(back.size(), cat.size());
    for (std::size_t i = 0; i < cat.size(); ++i) {
        EXPECT_EQ(std::memcmp(&back.events[i].t, &cat.events[i].t, sizeof(double)), 0);
        EXPECT_EQ(std::memcmp(&back.events[i].magnitude, &cat.events[i].magnitude, sizeof(double)), 0);
    }
    EXPECT_EQ(back.horizon_t, cat.horizon_t);
    EXPECT_EQ(back.origin_utc, cat.origin_utc);
    EXPECT_EQ(content_hash(back), hash);
    EXPECT_EQ(hash.size(), 64u);

    // Tamper with one magnitude.
    std::ifstream in(path);
    nlohmann::json j = nlohmann::json::parse(in);
    in.close();
    j["events"][10]["mag"] = 6.5;
    std::ofstream(path) << j.dump();
    EXPECT_THROW(load_catalogue(path), HashMismatchError);
    std::filesystem::remove(path);
}

TEST(Presets, StudyRegions) {
    const auto jp = japan_query();
    EXPECT_EQ(jp.min_magnitude, 4.75);
    EXPECT_EQ(jp.region.lon_min, 128.0);
    EXPECT_EQ(jp.region.lat_max, 47.0);
    const auto ma = middle_america_query();
    EXPECT_EQ(ma.min_magnitude, 4.0);
    EXPECT_EQ(ma.region.lon_min, -106.0);
    EXPECT_EQ(ma.region.lat_min, 15.0);
}

// ---------------------------------------------------------------------------
// FDSN client against a local server

namespace {

class FakeFdsn {
public:
    explicit FakeFdsn(std::vector<std::string> rows, long reported_count = -1)
        : rows_(std::move(rows)), reported_(reported_count < 0 ? static_cast<long>(rows_.size()) : reported_count) {
        server_.Get("/fdsnws/event/1/count", [this](const httplib::Request& req, httplib::Response& res) {
            if (req.get_param_value("format") != "geojson") {
                res.status = 400;
                return;
            }
            res.set_content("{\"count\":" + std::to_string(reported_) + ",\"maxAllowed\":20000}", "application/json");
        });
        server_.Get("/fdsnws/event/1/query", [this](const httplib::Request& req, httplib::Response& res) {
            ++pages_;
            const std::size_t limit = std::stoul(req.get_param_value("limit"));
            const std::size_t offset = std::stoul(req.get_param_value("offset"));
            std::string body = kHeader;
            for (std::size_t i = offset - 1; i < rows_.size() && i < offset - 1 + limit; ++i) body += rows_[i];
            res.set_content(body, "text/csv");
        });
        server_.Get("/broken/count", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeFdsn() {
        server_.stop();
        thread_.join();
    }
    std::string url(const std::string& path = "/fdsnws/event/1/") const {
        return "http://127.0.0.1:" + std::to_string(port_) + path;
    }
    int pages() const { return pages_; }

private:
    std::vector<std::string> rows_;
    long reported_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    int pages_ = 0;
};

std::vector<std::string> five_rows() {
    std::vector<std::string> rows;
    for (int i = 0; i < 5; ++i)
        rows.push_back(row("1993-07-1" + std::to_string(2 + i) + "T00:00:00.000Z", 35.0, 135.0, 5.0 + 0.1 * i));
    return rows;
}

}  // namespace

TEST(FetchUsgs, PaginatesAndConcatenates) {
    FakeFdsn server(five_rows());
    FetchOptions opts;
    opts.page_size = 2;
    const std::string csv = fetch_usgs(japan_query(), server.url(), opts);
    EXPECT_EQ(server.pages(), 3);
    IngestOptions ing = japan_like();
    const Catalogue cat = parse_usgs_csv(std::string_view(csv), ing);
    EXPECT_EQ(cat.size(), 5u);
    EXPECT_DOUBLE_EQ(cat.events.back().t, 4.0);
}

TEST(FetchUsgs, ZeroResultsGiveHeaderOnly) {
    FakeFdsn server({});
    const std::string csv = fetch_usgs(japan_query(), server.url());
    EXPECT_EQ(parse_csv(csv).size(), 1u);
    EXPECT_THROW(parse_usgs_csv(std::string_view(csv), japan_like()), EmptyCatalogueError);
}

TEST(FetchUsgs, CountMismatchIsPaginationError) {
    FakeFdsn server(five_rows(), 7);
    FetchOptions opts;
    opts.page_size = 2;
    try {
        fetch_usgs(japan_query(), server.url(), opts);
        FAIL() << "expected FetchError";
    } catch (const FetchError& e) {
        EXPECT_EQ(e.kind(), FetchError::Kind::pagination);
    }
}

TEST(FetchUsgs, HttpStatusAndTransportErrors) {
    FakeFdsn server(five_rows());
    try {
        fetch_usgs(japan_query(), server.url("/broken/"));
        FAIL() << "expected FetchError";
    } catch (const FetchError& e) {
        EXPECT_EQ(e.kind(), FetchError::Kind::http_status);
    }
    for (const std::string bad : {"not a url", "ftp://example.org/", "http://"}) {
        try {
            fetch_usgs(japan_query(), bad);
            FAIL() << "expected FetchError for " << bad;
        } catch (const FetchError& e) {
            EXPECT_EQ(e.kind(), FetchError::Kind::transport) << bad;
        }
    }
    FetchOptions quick;
    quick.timeout_seconds = 2;
    try {
        fetch_usgs(japan_query(), "http://127.0.0.1:1/fdsnws/event/1/", quick);
        FAIL() << "expected FetchError";
    } catch (const FetchError& e) {
        EXPECT_EQ(e.kind(), FetchError::Kind::transport);
    }
}
