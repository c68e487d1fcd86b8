def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long closed-loop simulation runs")
