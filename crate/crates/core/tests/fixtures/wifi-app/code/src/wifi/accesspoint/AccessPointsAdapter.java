class AccessPointsAdapter { List<WiFiDetail> networks; View getView(int position) { return inflate(networks.get(position)); } }
