#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "mdfhp/catalog.hpp"

#include <cstdio>
#include <string>

namespace mdfhp {
namespace {

constexpr const char* kUsgsCsvHeader =
    "time,latitude,longitude,depth,mag,magType,nst,gap,dmin,rms,net,id,updated,place,type,"
    "horizontalError,depthError,magError,magNst,status,locationSource,magSource";

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;    // always ends with '/'
};

Endpoint split_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw FetchError(FetchError::Kind::transport, "endpoint URL lacks a scheme: '" + url + "'");
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https")
        throw FetchError(FetchError::Kind::transport, "unsupported endpoint scheme '" + scheme + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    Endpoint ep;
    ep.origin = url.substr(0, path_start);
    ep.path = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (ep.origin.size() <= scheme_end + 3)
        throw FetchError(FetchError::Kind::transport, "endpoint URL lacks a host: '" + url + "'");
    if (ep.path.back() != '/') ep.path.push_back('/');
    return ep;
}

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

httplib::Params query_params(const UsgsQuery& q) {
    return {{"starttime", q.start},
            {"endtime", q.end},
            {"minlatitude", format_number(q.region.lat_min)},
            {"maxlatitude", format_number(q.region.lat_max)},
            {"minlongitude", format_number(q.region.lon_min)},
            {"maxlongitude", format_number(q.region.lon_max)},
            {"minmagnitude", format_number(q.min_magnitude)}};
}

std::string get(httplib::Client& client, const std::string& path, const httplib::Params& params) {
    const auto res = client.Get(httplib::append_query_params(path, params));
    if (!res) throw FetchError(FetchError::Kind::transport, "request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw FetchError(FetchError::Kind::http_status,
                         "HTTP " + std::to_string(res->status) + " from " + path + ": " + res->body.substr(0, 200));
    return res->body;
}

std::size_t count_data_lines(const std::string& csv) {
    std::size_t lines = 0;
    for (const auto& rec : parse_csv(csv)) {
        (void)rec;
        ++lines;
    }
    return lines == 0 ? 0 : lines - 1;
}

}  // namespace

std::string fetch_usgs(const UsgsQuery& query, const std::string& endpoint_url, const FetchOptions& opts) {
    validate(query.region);
    if (opts.page_size == 0) throw std::invalid_argument("page size must be positive");
    const Endpoint ep = split_endpoint(endpoint_url);

    httplib::Client client(ep.origin);
    client.set_connection_timeout(opts.timeout_seconds, 0);
    client.set_read_timeout(opts.timeout_seconds, 0);
    client.set_follow_location(true);

    auto params = query_params(query);
    auto count_params = params;
    count_params.emplace("format", "geojson");
    std::size_t expected = 0;
    {
        const std::string body = get(client, ep.path + "count", count_params);
        try {
            expected = nlohmann::json::parse(body).at("count").get<std::size_t>();
        } catch (const nlohmann::json::exception& e) {
            throw FetchError(FetchError::Kind::pagination, std::string("unreadable count response: ") + e.what());
        }
    }

    if (expected == 0) return std::string(kUsgsCsvHeader) + "\n";

    params.emplace("format", "csv");
    params.emplace("orderby", "time-asc");
    std::string header;
    std::string combined;
    std::size_t received = 0;
    std::size_t offset = 1;  // FDSN offsets are 1-based
    do {
        auto page_params = params;
        page_params.emplace("limit", std::to_string(opts.page_size));
        page_params.emplace("offset", std::to_string(offset));
        std::string page = get(client, ep.path + "query", page_params);

        const auto newline = page.find('\n');
        const std::string page_header = page.substr(0, newline);
        if (header.empty()) {
            header = page_header;
            combined = page_header + "\n";
        } else if (!page_header.empty() && page_header != header) {
            throw FetchError(FetchError::Kind::pagination, "CSV header changed between pages");
        }
        const std::size_t rows = count_data_lines(page);
        if (newline != std::string::npos) combined.append(page, newline + 1, std::string::npos);
        if (!combined.empty() && combined.back() != '\n') combined.push_back('\n');
        received += rows;
        if (rows == 0 && received < expected)
            throw FetchError(FetchError::Kind::pagination, "service returned an empty page before the reported count");
        offset += opts.page_size;
    } while (received < expected);

    if (received != expected)
        throw FetchError(FetchError::Kind::pagination, "received " + std::to_string(received) +
                                                           " events but the count endpoint reported " +
                                                           std::to_string(expected));
    return combined;
}

}  // namespace mdfhp
