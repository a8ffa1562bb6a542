#include "http_client.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "mmreact/error.hpp"

namespace mmreact::detail {

SplitUrl split_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw Error(Errc::invalid_config, "URL without scheme: " + std::string(url));
  }
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw Error(Errc::invalid_config, "unsupported URL scheme: " + std::string(url));
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

HttpResult post_json(const std::string& url, const std::string& body, const Headers& headers,
                     int timeout_seconds) {
  const auto parts = split_url(url);
  httplib::Client client(parts.origin);
  client.set_connection_timeout(timeout_seconds, 0);
  client.set_read_timeout(timeout_seconds, 0);
  client.set_write_timeout(timeout_seconds, 0);
  httplib::Headers hdrs;
  for (const auto& [k, v] : headers) hdrs.emplace(k, v);
  auto res = client.Post(parts.path, hdrs, body, "application/json");
  if (!res) {
    throw Error(Errc::transport_error,
                "POST " + url + " failed: " + httplib::to_string(res.error()));
  }
  return {res->status, res->body};
}

std::string excerpt(std::string_view body, std::size_t max) {
  if (body.size() <= max) return std::string(body);
  return std::string(body.substr(0, max)) + "...";
}

}  // namespace mmreact::detail
