import hypothesis

hypothesis.settings.register_profile(
    "numeric", deadline=None, max_examples=60, derandomize=True)
hypothesis.settings.load_profile("numeric")
