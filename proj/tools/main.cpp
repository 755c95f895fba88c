#include "cli.hpp"

int main(int argc, char** argv) { return tensortree::cli::run(argc, argv); }
