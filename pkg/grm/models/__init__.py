"""Network building blocks"""
