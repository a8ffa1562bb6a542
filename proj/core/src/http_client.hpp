#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mmreact::detail {

struct HttpResult {
  int status = 0;
  std::string body;
};

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

// Throws Error{invalid_config} for anything but http(s) URLs.
SplitUrl split_url(std::string_view url);

using Headers = std::vector<std::pair<std::string, std::string>>;

// JSON POST. Throws Error{transport_error} when no response arrives.
HttpResult post_json(const std::string& url, const std::string& body, const Headers& headers,
                     int timeout_seconds);

std::string excerpt(std::string_view body, std::size_t max = 200);

}  // namespace mmreact::detail
